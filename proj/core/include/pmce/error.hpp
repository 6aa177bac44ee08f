#pragma once

#include <stdexcept>
#include <string>

namespace pmce {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix shapes that do not agree with each other or a config.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, unknown format version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A precondition on an argument value was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in inputs or a loss that stopped being finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmce
