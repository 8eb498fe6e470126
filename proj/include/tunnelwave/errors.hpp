#pragma once

#include <stdexcept>
#include <string>

namespace tw {

// Error families map onto the CLI exit codes: config (2), data (3), numeric (4).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorKind { bad_magic, unsupported_version, truncated_payload, checksum_mismatch, io };

const char* to_string(FormatErrorKind kind);

/// Failure while decoding one of the binary containers (datasets, checkpoints).
class FormatError : public DataError {
 public:
  FormatError(FormatErrorKind kind, const std::string& detail)
      : DataError(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace tw
