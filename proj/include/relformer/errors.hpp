#pragma once

#include <stdexcept>
#include <string>

namespace relformer {

// Input violates an operation's documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input is numerically degenerate (zero vectors, rank deficiency).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Tensor shapes do not satisfy an op's shape law.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Configuration rejected by validation. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numeric failure during training or evaluation. Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system or format failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relformer
