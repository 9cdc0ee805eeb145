#pragma once

#include <stdexcept>
#include <string>

namespace outfit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model / training / dataset configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-contract input data.
class InputError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable, truncated, or incompatible files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace outfit
