#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lct {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Convolution geometry that yields a non-positive output extent.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Channel count not divisible by the effective group count.
class GroupError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong lifecycle state (backward without forward,
// optimizer step without gradients, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A checkpoint that does not fit the network it is loaded into.
class CheckpointMismatch : public CheckpointError {
 public:
  CheckpointMismatch(std::string tensor, const std::string& what)
      : CheckpointError(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace lct
