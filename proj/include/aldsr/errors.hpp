#pragma once

#include <stdexcept>
#include <string>

namespace aldsr {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (non-scalar loss, tape misuse, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class UnsupportedKernelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Image or patch request outside the available extent.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, missing or corrupt input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed weight or checkpoint container.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aldsr
