#include "l1bn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "l1bn/errors.hpp"

namespace l1bn {

Tensor finite_diff(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double plus = f(probe);
    probe[i] = original - h;
    const double minus = f(probe);
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw EvaluationError("non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

ProbeLoss ProbeLoss::random(Rng& rng, const Shape& shape) { return {normal_sample(rng, shape, 0.0, 1.0)}; }

double ProbeLoss::operator()(const Tensor& y) const {
  if (y.shape() != projection.shape()) throw ShapeError("probe loss shape mismatch");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<long double>(projection[i]) * y[i];
  return static_cast<double>(acc);
}

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

ErrorStats compare_gradients(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) throw ShapeError("gradient shapes differ");
  ErrorStats stats;
  std::size_t worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double rel = relative_error(analytic[i], numeric[i]);
    stats.max_abs_err = std::max(stats.max_abs_err, std::fabs(analytic[i] - numeric[i]));
    if (rel > stats.max_rel_err) {
      stats.max_rel_err = rel;
      worst = i;
    }
  }
  if (!analytic.empty()) stats.worst_index = analytic.unravel(worst);
  return stats;
}

namespace {

bool has_ties(const Tensor& x, Layout layout, double margin) {
  const auto stats = l2_batch_stats(x, layout);
  const Tensor centered = sub(x, expand(stats.mean, x.shape(), batch_axes(layout)));
  return std::any_of(centered.data().begin(), centered.data().end(),
                     [margin](double v) { return std::fabs(v) <= margin; });
}

void record(GradReport& report, std::string name, const ErrorStats& stats) {
  if (report.entries.empty() || stats.max_rel_err > report.max_rel_err) {
    report.max_rel_err = stats.max_rel_err;
    report.worst_param = name;
    report.worst_index = stats.worst_index;
  }
  report.max_abs_err = std::max(report.max_abs_err, stats.max_abs_err);
  report.entries.push_back({std::move(name), stats});
}

}  // namespace

GradReport check_layer(const CheckConfig& config) {
  const Layout layout = layout_for_rank(config.shape.size());
  Rng rng(config.seed);

  GradReport report;
  report.mode = config.mode;
  report.layout = layout;
  report.shape = config.shape;
  report.seed = config.seed;
  report.step = config.step;

  if (element_count(config.shape) / config.shape.back() < 4) {
    throw BatchSizeError("gradient check needs at least 4 pooled values per feature");
  }

  Tensor x = normal_sample(rng, config.shape, 0.5, 1.5);
  if (is_l1(config.mode)) {
    while (has_ties(x, layout, config.tie_margin)) {
      if (++report.resamples > config.max_resamples) {
        throw DegenerateInputError("could not draw a tie-free batch within " +
                                   std::to_string(config.max_resamples) + " resamples");
      }
      x = normal_sample(rng, config.shape, 0.5, 1.5);
    }
  }

  const std::size_t features = config.shape.back();
  BnParams params = BnParams::make(features, config.mode, config.use_affine, 1.0, config.epsilon);
  params.gamma = uniform_sample(rng, {features}, 0.5, 1.5);
  params.beta = normal_sample(rng, {features}, 0.0, 1.0);
  const ProbeLoss loss = ProbeLoss::random(rng, config.shape);

  const auto forward = bn_forward_train(x, params, layout);
  const Tensor& d_y = loss.projection;

  const Tensor num_input = finite_diff(
      [&](const Tensor& xp) { return loss(bn_forward_train(xp, params, layout).y); }, x, config.step);
  const Tensor num_gamma = finite_diff(
      [&](const Tensor& g) {
        BnParams p = params;
        p.gamma = g;
        return loss(bn_forward_train(x, p, layout).y);
      },
      params.gamma, config.step);
  const Tensor num_beta = finite_diff(
      [&](const Tensor& b) {
        BnParams p = params;
        p.beta = b;
        return loss(bn_forward_train(x, p, layout).y);
      },
      params.beta, config.step);

  const GradBundle grads = bn_backward(d_y, forward.cache, params, layout);
  record(report, "input", compare_gradients(grads.d_input, num_input));
  record(report, "gamma", compare_gradients(grads.d_gamma, num_gamma));
  record(report, "beta", compare_gradients(grads.d_beta, num_beta));

  if (is_l1(config.mode)) {
    const GradBundle naive = bn_backward_l1_naive(d_y, forward.cache, params, layout);
    record(report, "input_naive", compare_gradients(naive.d_input, num_input));
    report.backward_agreement = compare_gradients(naive.d_input, grads.d_input).max_rel_err;
  }
  return report;
}

GradReport check_layer(BnMode mode, Layout layout, const Shape& shape, std::uint64_t seed) {
  if (layout_for_rank(shape.size()) != layout) throw LayoutError("shape rank does not match layout");
  CheckConfig config;
  config.mode = mode;
  config.shape = shape;
  config.seed = seed;
  return check_layer(config);
}

}  // namespace l1bn
