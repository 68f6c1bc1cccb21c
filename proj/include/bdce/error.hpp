#pragma once

#include <stdexcept>
#include <string>

namespace bdce {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or argument contract violated by the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loss or activation became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file unreadable, malformed, or incompatible with the model spec.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace bdce
