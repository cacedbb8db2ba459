#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace noisylab {

enum class ErrorKind {
  Dimension,
  State,
  Parameter,
  Data,
  Format,
  Io,
  Numeric,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::State: return "state";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI's machine-readable error line) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error(ErrorKind::Dimension, m) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& m) : Error(ErrorKind::State, m) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& m) : Error(ErrorKind::Parameter, m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error(ErrorKind::Format, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};

}  // namespace noisylab
