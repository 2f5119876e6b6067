#pragma once

#include <map>
#include <string>
#include <vector>

namespace cw {

// Binary named-parameter container shared by backbone checkpoints and adapter
// artifacts. Raw little-endian f64 payloads round-trip bitwise.
struct ParamFile {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
  };
  std::map<std::string, std::string> meta;
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const;
  std::string meta_at(const std::string& key) const;  // raises config if absent
};

void write_param_file(const std::string& path, const ParamFile& file);
ParamFile read_param_file(const std::string& path);

}  // namespace cw
