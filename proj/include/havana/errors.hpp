#pragma once

#include <stdexcept>
#include <string>

namespace havana {

// Error taxonomy mirrors the CLI exit codes: 1 usage, 2 data, 3 numeric.
class Error : public std::runtime_error {
 public:
  Error(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

// Bad configuration or misuse of a documented contract.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(1, msg) {}
};

// Malformed files, mismatched shapes/labels, missing inputs.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(2, msg) {}
};

// Non-finite values, domain violations, training divergence.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(3, msg) {}
};

}  // namespace havana
