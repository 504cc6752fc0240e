#include "l1bn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "l1bn/errors.hpp"

namespace l1bn {

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto lhs = a.data();
  auto rhs = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < lhs.size(); ++i) dst[i] = f(lhs[i], rhs[i]);
  return out;
}

// Maps each flat offset of a tensor with `shape` to the flat offset of the
// reduced tensor obtained by dropping `axes`.
std::vector<std::size_t> reduced_offsets(const Shape& shape, const AxisSet& axes, Shape& reduced_shape) {
  std::vector<bool> is_reduced(shape.size(), false);
  for (auto a : axes) is_reduced[a] = true;

  reduced_shape.clear();
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (!is_reduced[d]) reduced_shape.push_back(shape[d]);
  }

  // Stride of each input axis inside the reduced tensor (0 for reduced axes).
  std::vector<std::size_t> stride(shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (!is_reduced[d]) {
      stride[d] = s;
      s *= shape[d];
    }
  }

  const std::size_t n = element_count(shape);
  std::vector<std::size_t> out(n);
  std::vector<std::size_t> index(shape.size(), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = offset;
    // Increment the row-major multi-index and keep `offset` in sync.
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++index[d];
      offset += stride[d];
      if (index[d] < shape[d]) break;
      offset -= stride[d] * shape[d];
      index[d] = 0;
    }
  }
  if (reduced_shape.empty()) reduced_shape.push_back(1);
  return out;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor Tensor::from_vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::offset_of(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match tensor rank " +
                     std::to_string(shape_.size()));
  }
  std::size_t offset = 0;
  std::size_t d = 0;
  for (auto i : index) {
    if (i >= shape_[d]) throw ShapeError("index out of range on axis " + std::to_string(d));
    offset = offset * shape_[d] + i;
    ++d;
  }
  return offset;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset_of(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset_of(index)]; }

std::vector<std::size_t> Tensor::unravel(std::size_t offset) const {
  std::vector<std::size_t> index(shape_.size());
  for (std::size_t d = shape_.size(); d-- > 0;) {
    index[d] = offset % shape_[d];
    offset /= shape_[d];
  }
  return index;
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return zip(a, b, "div", [](double x, double y) { return x / y; });
}
Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double x) { return x * factor; });
}
Tensor abs(const Tensor& a) {
  return map(a, [](double x) { return std::fabs(x); });
}
Tensor sign(const Tensor& a) {
  return map(a, [](double x) { return sign(x); });
}
Tensor square(const Tensor& a) {
  return map(a, [](double x) { return x * x; });
}
Tensor sqrt(const Tensor& a) {
  return map(a, [](double x) {
    if (x < 0.0) throw DomainError("sqrt of negative value " + std::to_string(x));
    return std::sqrt(x);
  });
}

void validate_axes(const AxisSet& axes, std::size_t rank) {
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= rank) {
      throw ShapeError("axis " + std::to_string(axes[i]) + " out of range for rank " + std::to_string(rank));
    }
    if (i > 0 && axes[i] <= axes[i - 1]) throw ShapeError("axis set must be sorted and unique");
  }
}

Tensor reduce_sum(const Tensor& t, const AxisSet& axes) {
  validate_axes(axes, t.rank());
  Shape reduced_shape;
  const auto target = reduced_offsets(t.shape(), axes, reduced_shape);
  Tensor out(reduced_shape);
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[target[i]] += src[i];
  return out;
}

Tensor reduce_mean(const Tensor& t, const AxisSet& axes) {
  validate_axes(axes, t.rank());
  std::size_t count = 1;
  for (auto a : axes) count *= t.shape()[a];
  return scale(reduce_sum(t, axes), 1.0 / static_cast<double>(count));
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return acc;
}

double mean(const Tensor& t) { return sum(t) / static_cast<double>(t.size()); }

Tensor expand(const Tensor& reduced, const Shape& full_shape, const AxisSet& axes) {
  validate_axes(axes, full_shape.size());
  Shape reduced_shape;
  const auto source = reduced_offsets(full_shape, axes, reduced_shape);
  if (reduced.shape() != reduced_shape) {
    throw ShapeError("expand: reduced tensor " + shape_to_string(reduced.shape()) + " does not match " +
                     shape_to_string(reduced_shape));
  }
  Tensor out(full_shape);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = reduced[source[i]];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const std::size_t n = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  Tensor out({n, p});
  auto lhs = a.data();
  auto rhs = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = dst.data() + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const double aij = lhs[i * k + j];
      const double* brow = rhs.data() + j * p;
      for (std::size_t c = 0; c < p; ++c) row[c] += aij * brow[c];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a 2-D tensor");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

bool all_finite(const Tensor& t) noexcept {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace l1bn
