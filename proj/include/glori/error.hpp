#pragma once

#include <stdexcept>
#include <string>

namespace glori {

// Base of every error raised by the library. The CLI maps each subclass onto
// a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents that do not line up for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, overflow, non-positive temperature, etc.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent files and tables.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (missing file, unwritable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad arguments or configuration supplied by a caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace glori
