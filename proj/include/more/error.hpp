#pragma once

#include <stdexcept>
#include <string>

namespace more {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (shape mismatch, empty input, bad option).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but numerically degenerate for the requested operation.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Malformed or schema-violating configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents failed validation (magic, version, CRC, payload size).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace more
