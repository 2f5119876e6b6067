#include "cw/paramfile.hpp"

#include <cstdint>
#include <fstream>

#include "cw/error.hpp"
#include "cw/tensor.hpp"

namespace cw {

namespace {

constexpr char kMagic[4] = {'C', 'W', 'P', 'M'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) raise(ErrorCategory::parse, "parameter file truncated");
  return v;
}

int32_t read_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) raise(ErrorCategory::parse, "parameter file truncated");
  return v;
}

std::string read_str(std::istream& is) {
  const uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) raise(ErrorCategory::parse, "parameter file truncated");
  return s;
}

}  // namespace

const ParamFile::Entry* ParamFile::find(const std::string& name) const {
  for (const Entry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string ParamFile::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) raise(ErrorCategory::config, "parameter file missing meta key '" + key + "'");
  return it->second;
}

void write_param_file(const std::string& path, const ParamFile& file) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(file.meta.size()));
  for (const auto& [k, v] : file.meta) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u32(os, static_cast<uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    write_str(os, e.name);
    write_u32(os, static_cast<uint32_t>(e.shape.size()));
    size_t n = 1;
    for (int d : e.shape) {
      write_i32(os, d);
      n *= static_cast<size_t>(d);
    }
    if (n != e.data.size()) raise(ErrorCategory::dimension, "entry '" + e.name + "' data does not fill its shape");
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) raise(ErrorCategory::io, "write failed: " + path);
}

ParamFile read_param_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    raise(ErrorCategory::parse, "not a parameter file: " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != kVersion) {
    raise(ErrorCategory::compat, "unsupported parameter file version " + std::to_string(version));
  }
  ParamFile file;
  const uint32_t n_meta = read_u32(is);
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_str(is);
    std::string v = read_str(is);
    file.meta.emplace(std::move(k), std::move(v));
  }
  const uint32_t n_entries = read_u32(is);
  for (uint32_t i = 0; i < n_entries; ++i) {
    ParamFile::Entry e;
    e.name = read_str(is);
    const uint32_t ndim = read_u32(is);
    size_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const int32_t dim = read_i32(is);
      if (dim <= 0) raise(ErrorCategory::parse, "non-positive dimension in entry '" + e.name + "'");
      e.shape.push_back(dim);
      n *= static_cast<size_t>(dim);
    }
    e.data.resize(n);
    is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) raise(ErrorCategory::parse, "parameter file truncated in entry '" + e.name + "'");
    file.entries.push_back(std::move(e));
  }
  return file;
}

}  // namespace cw
