#pragma once

#include <stdexcept>
#include <string>

namespace tvfactor {

/// Bad configuration or out-of-range argument.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Factorization failure, non-PD covariance, singular normal equations.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every kernel value at a query time underflowed.
class DegenerateWeightsError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace tvfactor
