#pragma once

#include <stdexcept>
#include <string>

namespace basrec {

// Error families map onto distinct CLI exit codes (see cli/exit_codes.hpp).

/// Invalid hyperparameter, unknown config key, or bad CLI flag.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input data, empty dataset, bad cache file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced by a kernel op, divergent loss, failed gradient check.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Index out of range (item id beyond the embedding table, etc.).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace basrec
