#pragma once

#include <stdexcept>
#include <string>

namespace cw {

// Failure categories surfaced on the CLI as a single machine-parsable line.
enum class ErrorCategory {
  usage,       // bad command line
  input,       // missing/empty input
  parse,       // malformed file content
  validation,  // content-level rule violated
  config,      // inconsistent configuration
  dimension,   // tensor shape mismatch
  compat,      // artifact incompatible with target model
  index,       // id/index out of range
  numeric,     // non-finite value where finiteness is required
  io,          // filesystem failure
};

const char* to_string(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void raise(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

}  // namespace cw
