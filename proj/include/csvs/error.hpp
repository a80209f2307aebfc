#pragma once

#include <stdexcept>
#include <string>

namespace csvs {

// Malformed input, shape mismatch, unknown symbol, I/O failure.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, indefinite systems, filter blow-up.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable checkpoint file.
class CheckpointError : public DataError {
 public:
  enum class Kind { truncated, version_mismatch, corrupt };

  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace csvs
