#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad hyperparameter, invalid model spec, unknown key).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, labels, prediction sets).
class DataError : public Error {
 public:
  using Error::Error;
};

// API contract violation (non-scalar loss, missing gradient buffer).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numeric failure: NaN/Inf escaped a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtl
