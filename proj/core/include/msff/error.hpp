#pragma once

#include <stdexcept>
#include <string>

namespace msff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (wrong shape, bad index, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed or incompatible file. `path()` names the file, `field()` the
/// element inside it (may be empty).
class FormatError : public Error {
 public:
  FormatError(std::string path, std::string field, const std::string& what)
      : Error(path + (field.empty() ? "" : " [" + field + "]") + ": " + what),
        path_(std::move(path)),
        field_(std::move(field)) {}
  const std::string& path() const noexcept { return path_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string path_;
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace msff
