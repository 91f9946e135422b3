#pragma once

#include <stdexcept>
#include <string>

namespace cwhar {

// Base of every library error. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model/encoder configuration (e.g. input too small for the pooling stack).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated container on disk, or an unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed data whose content is unusable (missing view, unknown label).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace cwhar
