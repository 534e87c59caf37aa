#pragma once

#include <stdexcept>
#include <string>

namespace dnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or array shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index outside the valid range of a container.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument outside its admissible range (k >= N, rate >= 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Degenerate geometric input, e.g. a cloud whose points all coincide.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the offending line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// File-system failures; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (unknown key, mismatched class count, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset content that cannot be used (empty split, unknown label, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimizer or graph state that does not permit the requested operation.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Base of the checkpoint failures below.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// The file does not start with the checkpoint magic bytes.
class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// The file ends before the declared content.
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Stored tensors do not match the parameters of the configured model.
class TensorMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// The stored model configuration differs from the expected one.
class ConfigMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace dnet
