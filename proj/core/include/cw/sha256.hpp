#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cw {

// Incremental SHA-256 (FIPS 180-4). Used for input/artifact hashing in run
// manifests and for the frozen-parameter-group contracts.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex_digest();  // finalizes; further updates are invalid

 private:
  void process_block(const uint8_t* block);
  uint32_t state_[8];
  uint64_t total_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
  bool finalized_ = false;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);
std::string sha256_doubles_hex(const std::vector<double>& v);

}  // namespace cw
