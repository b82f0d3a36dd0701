#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgssl {

// Scalar type for all in-memory tensor math. Checkpoints store float32.
using real = double;

using Shape = std::vector<int64_t>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension / shape contract violations.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid parameter values (negative lr, zero temperature, ...).
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf detected during computation. Fail fast instead of propagating.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed binary/CSV input. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  size_t offset;
};

// Inconsistent run configuration (missing checkpoint, bad ranges, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Metric undefined for the given inputs (no positives, degenerate normalizer).
class MetricError : public Error {
 public:
  explicit MetricError(const std::string& msg) : Error(msg) {}
};

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace ecgssl
