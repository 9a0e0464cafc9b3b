#pragma once

#include <stdexcept>
#include <string>

namespace nhsplat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system and format problems (CLI exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; a subtype of IoError.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite values during optimization (CLI exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Precondition violations on in-memory values (bad direction, shape mismatch, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace nhsplat
