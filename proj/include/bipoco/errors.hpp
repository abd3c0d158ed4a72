#pragma once

#include <stdexcept>
#include <string>

namespace bipoco {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numeric = 4 };

/// Base of every error thrown by the library. Each subclass carries the
/// exit code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what, ExitCode::config) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, ExitCode::data) {}
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class MissingJointError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class WeightError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateLabelsError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

class NonFiniteLossError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace bipoco
