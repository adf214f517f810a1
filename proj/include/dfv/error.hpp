#pragma once

#include <stdexcept>
#include <string>

namespace dfv {

// Error taxonomy. The CLI maps each class onto a process exit code.

/// Tensor extents or argument shapes disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN/Inf was produced or consumed, or a reduction had nothing to reduce.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every element was masked out of a masked mean.
class EmptyMaskError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File-system or format failure, always carrying the path (exit code 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint does not fit the network it is loaded into (exit code 4).
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfv
