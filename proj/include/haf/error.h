#pragma once

#include <stdexcept>
#include <string>

namespace haf {

// Every error raised by the library derives from Error so callers can map
// categories onto process exit codes (see tools/haf_cli.cc).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that violate a stride/channel contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed parameter archives.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration (weights, radii, grid step, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Manifest, image and database problems.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace haf
