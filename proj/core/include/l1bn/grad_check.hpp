#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "l1bn/batch_norm.hpp"
#include "l1bn/rng.hpp"
#include "l1bn/tensor.hpp"

namespace l1bn {

using ScalarFunction = std::function<double(const Tensor&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
// Throws DomainError for h <= 0 and EvaluationError if f returns a non-finite value.
Tensor finite_diff(const ScalarFunction& f, const Tensor& x, double h);

// loss(y) = sum(projection * y), so dl/dy == projection exactly.
struct ProbeLoss {
  Tensor projection;

  static ProbeLoss random(Rng& rng, const Shape& shape);
  double operator()(const Tensor& y) const;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric) noexcept;

struct ErrorStats {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::vector<std::size_t> worst_index;
};

ErrorStats compare_gradients(const Tensor& analytic, const Tensor& numeric);

struct NamedError {
  std::string name;
  ErrorStats stats;
};

struct GradReport {
  BnMode mode = BnMode::L2;
  Layout layout = Layout::Features2d;
  Shape shape;
  std::uint64_t seed = 0;
  double step = 0.0;
  std::size_t resamples = 0;

  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::vector<std::size_t> worst_index;

  // input / gamma / beta for the mode's canonical backward; L1 modes add the
  // naive backward's input gradient as "input_naive".
  std::vector<NamedError> entries;
  // L1 modes: largest relative gap between the naive and simplified backward.
  std::optional<double> backward_agreement;
};

struct CheckConfig {
  BnMode mode = BnMode::L2;
  Shape shape{7, 3};
  std::uint64_t seed = 1;
  double step = 1e-6;
  double epsilon = 1e-5;
  bool use_affine = true;
  // L1 inputs are redrawn until every |x_i - mu_B| exceeds this margin.
  double tie_margin = 1e-3;
  std::size_t max_resamples = 100;
};

// Draws a random batch, gamma, beta and probe loss, then compares every
// analytic gradient against finite_diff. Throws DegenerateInputError when no
// tie-free batch is found within max_resamples draws.
GradReport check_layer(const CheckConfig& config);
GradReport check_layer(BnMode mode, Layout layout, const Shape& shape, std::uint64_t seed);

}  // namespace l1bn
