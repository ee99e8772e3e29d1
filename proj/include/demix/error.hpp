#pragma once

#include <stdexcept>
#include <string>

namespace demix {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Malformed or missing input data (corpus files, checkpoints, reports).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace demix
