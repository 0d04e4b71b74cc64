#pragma once

#include <stdexcept>
#include <string>

namespace fracspde {

/// Shapes or lengths of two operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cholesky hit a non-positive pivot. `pivot()` is the row index in the
/// caller's (unpermuted) ordering.
class NotSpdError : public std::runtime_error {
 public:
  NotSpdError(const std::string& what, long pivot, double value)
      : std::runtime_error(what), pivot_(pivot), value_(value) {}
  long pivot() const noexcept { return pivot_; }
  double pivot_value() const noexcept { return value_; }

 private:
  long pivot_;
  double value_;
};

/// A selected-inverse entry was requested outside the factor's fill pattern.
class PatternError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point could not be located in the triangulation.
class OutsideMeshError : public std::runtime_error {
 public:
  OutsideMeshError(const std::string& what, long index)
      : std::runtime_error(what), index_(index) {}
  long index() const noexcept { return index_; }

 private:
  long index_;
};

/// Zero-area or otherwise unusable triangle.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file or configuration value.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fracspde
