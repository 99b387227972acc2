#pragma once

#include <stdexcept>
#include <string>

namespace drl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; message carries expected vs actual.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: stepping a terminal env, out-of-range index, wrong variant.
class UsageError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public Error {
 public:
  CorruptCheckpointError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace drl
