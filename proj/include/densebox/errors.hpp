#pragma once

#include <stdexcept>
#include <string>

namespace densebox {

// Shape/precondition violations on tensor ops and map geometry.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of stateful machinery (e.g. stepping an optimizer without gradients).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad external inputs: files, configs, checkpoints, annotations. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure (non-finite loss, divergence). CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace densebox
