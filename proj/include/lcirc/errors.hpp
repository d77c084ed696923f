#pragma once

#include <stdexcept>
#include <string>

namespace lcirc {

// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token id or target outside [0, V).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated an operation precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Sequence longer than the positional table of the base model.
class WindowExceededError : public std::length_error {
 public:
  WindowExceededError(std::size_t n, std::size_t m)
      : std::length_error("input length " + std::to_string(n) +
                          " exceeds positional window M=" + std::to_string(m)),
        length(n),
        window(m) {}
  std::size_t length;
  std::size_t window;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SegmentationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lcirc
