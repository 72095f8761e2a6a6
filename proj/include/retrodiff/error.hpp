#pragma once

#include <stdexcept>
#include <string>

namespace retrodiff {

// Base for every error raised by the library. Callers that only need
// to report a failure can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad ranges, inconsistent options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Tensor extents do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Non-finite values or an ill-conditioned numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace retrodiff
