#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace l1bn {

using Shape = std::vector<std::size_t>;

// Sorted, duplicate-free list of axis indices.
using AxisSet = std::vector<std::size_t>;

// Dense row-major array of doubles. Every dimension is positive and
// data().size() == product of shape at all times.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor from_vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Multi-index access with bounds checking.
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  // Row-major coordinates of a flat offset.
  std::vector<std::size_t> unravel(std::size_t offset) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset_of(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Elementwise operations. Binary operands must have equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor abs(const Tensor& a);
// sign(0) == 0.
Tensor sign(const Tensor& a);
Tensor square(const Tensor& a);
// Throws DomainError on any negative element.
Tensor sqrt(const Tensor& a);

double sign(double v) noexcept;

// Reductions. The result drops the reduced axes; reducing every axis yields a
// rank-1 tensor of length 1. Sums run sequentially in ascending flat-offset
// order, so results are bit-reproducible.
Tensor reduce_sum(const Tensor& t, const AxisSet& axes);
Tensor reduce_mean(const Tensor& t, const AxisSet& axes);
double sum(const Tensor& t);
double mean(const Tensor& t);

// Inverse of a reduction's shape change: re-inserts the reduced axes of
// `full_shape` and repeats `reduced` along them.
Tensor expand(const Tensor& reduced, const Shape& full_shape, const AxisSet& axes);

// 2-D helpers used by dense layers.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Checks that axes are sorted, unique and below `rank`; throws ShapeError otherwise.
void validate_axes(const AxisSet& axes, std::size_t rank);

bool all_finite(const Tensor& t) noexcept;

}  // namespace l1bn
