#include "l1bn/batch_norm.hpp"

#include <cmath>
#include <string>

#include "l1bn/errors.hpp"

namespace l1bn {

namespace {

Tensor broadcast(const Tensor& stat, const Tensor& like, Layout layout) {
  return expand(stat, like.shape(), batch_axes(layout));
}

Tensor pooled_sum(const Tensor& t, Layout layout) { return reduce_sum(t, batch_axes(layout)); }
Tensor pooled_mean(const Tensor& t, Layout layout) { return reduce_mean(t, batch_axes(layout)); }

std::size_t require_batch(const Tensor& x, Layout layout) {
  const std::size_t count = pooled_count(x, layout);
  if (count < 2) {
    throw BatchSizeError("batch statistics need at least 2 pooled values per feature, got " +
                         std::to_string(count));
  }
  return count;
}

void check_backward_inputs(const Tensor& d_y, const BnCache& cache, const BnParams& params, Layout layout) {
  if (d_y.shape() != cache.x_hat.shape()) {
    throw ShapeError("d_y shape " + shape_to_string(d_y.shape()) + " does not match forward input " +
                     shape_to_string(cache.x_hat.shape()));
  }
  params.validate(feature_count(d_y, layout));
}

// dl/dx_hat = dl/dy * gamma, or dl/dy itself when the affine transform is off.
Tensor grad_x_hat(const Tensor& d_y, const BnParams& params, Layout layout) {
  return params.use_affine ? mul(d_y, broadcast(params.gamma, d_y, layout)) : d_y;
}

void fill_affine_grads(GradBundle& out, const Tensor& d_y, const BnCache& cache, const BnParams& params,
                       Layout layout) {
  if (params.use_affine) {
    out.d_gamma = pooled_sum(mul(d_y, cache.x_hat), layout);
    out.d_beta = pooled_sum(d_y, layout);
  } else {
    out.d_gamma = Tensor({params.features()}, 0.0);
    out.d_beta = Tensor({params.features()}, 0.0);
  }
}

}  // namespace

std::string_view to_string(BnMode mode) noexcept {
  switch (mode) {
    case BnMode::L2: return "l2";
    case BnMode::L1: return "l1";
    case BnMode::L1Compensated: return "l1c";
  }
  return "?";
}

std::string_view to_string(Layout layout) noexcept {
  switch (layout) {
    case Layout::Features2d: return "2d";
    case Layout::Channels4d: return "4d";
  }
  return "?";
}

BnMode parse_mode(std::string_view text) {
  if (text == "l2" || text == "L2") return BnMode::L2;
  if (text == "l1" || text == "L1") return BnMode::L1;
  if (text == "l1c" || text == "L1C" || text == "l1-compensated") return BnMode::L1Compensated;
  throw Error("unknown normalization mode '" + std::string(text) + "' (expected l2, l1 or l1c)");
}

AxisSet batch_axes(Layout layout) {
  switch (layout) {
    case Layout::Features2d: return {0};
    case Layout::Channels4d: return {0, 1, 2};
  }
  throw LayoutError("unknown layout");
}

Layout layout_for_rank(std::size_t rank) {
  if (rank == 2) return Layout::Features2d;
  if (rank == 4) return Layout::Channels4d;
  throw LayoutError("unsupported tensor rank " + std::to_string(rank) + " (expected 2 or 4)");
}

std::size_t feature_count(const Tensor& x, Layout layout) {
  if (layout_for_rank(x.rank()) != layout) {
    throw LayoutError("tensor of rank " + std::to_string(x.rank()) + " does not match layout " +
                      std::string(to_string(layout)));
  }
  return x.shape().back();
}

std::size_t pooled_count(const Tensor& x, Layout layout) {
  return x.size() / feature_count(x, layout);
}

BnParams BnParams::make(std::size_t features, BnMode mode, bool use_affine, double gamma_init, double epsilon) {
  BnParams p;
  p.gamma = Tensor({features}, gamma_init);
  p.beta = Tensor({features}, 0.0);
  p.epsilon = epsilon;
  p.mode = mode;
  p.use_affine = use_affine;
  return p;
}

void BnParams::validate(std::size_t features) const {
  if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.size() != features || beta.size() != features) {
    throw ShapeError("gamma/beta length must equal the feature count " + std::to_string(features));
  }
}

BnState BnState::make(std::size_t features, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw DomainError("momentum must lie in [0, 1]");
  BnState s;
  s.running_mu = Tensor({features}, 0.0);
  s.running_sigma = Tensor({features}, 1.0);
  s.momentum = momentum;
  return s;
}

L2Stats l2_batch_stats(const Tensor& x, Layout layout) {
  require_batch(x, layout);
  Tensor mu = pooled_mean(x, layout);
  Tensor centered = sub(x, broadcast(mu, x, layout));
  return {std::move(mu), pooled_mean(square(centered), layout)};
}

L1Stats l1_batch_stats(const Tensor& x, Layout layout, bool compensate) {
  require_batch(x, layout);
  Tensor mu = pooled_mean(x, layout);
  Tensor centered = sub(x, broadcast(mu, x, layout));
  Tensor deviation = pooled_mean(abs(centered), layout);
  if (compensate) deviation = scale(deviation, kGaussianDeviationRatio);
  return {std::move(mu), std::move(deviation)};
}

ForwardResult bn_forward_train(const Tensor& x, const BnParams& params, Layout layout) {
  params.validate(feature_count(x, layout));

  BnCache cache;
  cache.mode = params.mode;
  cache.epsilon = params.epsilon;
  if (params.mode == BnMode::L2) {
    auto stats = l2_batch_stats(x, layout);
    cache.mu_b = std::move(stats.mean);
    cache.sigma_b = sqrt(stats.variance);
    Tensor shifted = stats.variance;
    for (double& v : shifted.data()) v += params.epsilon;
    cache.normalizer = sqrt(shifted);
  } else {
    auto stats = l1_batch_stats(x, layout, params.mode == BnMode::L1Compensated);
    cache.mu_b = std::move(stats.mean);
    cache.sigma_b = std::move(stats.deviation);
    cache.normalizer = cache.sigma_b;
    for (double& v : cache.normalizer.data()) v += params.epsilon;
  }
  cache.x_hat = div(sub(x, broadcast(cache.mu_b, x, layout)), broadcast(cache.normalizer, x, layout));

  Tensor y = cache.x_hat;
  if (params.use_affine) {
    y = add(mul(cache.x_hat, broadcast(params.gamma, x, layout)), broadcast(params.beta, x, layout));
  }
  return {std::move(y), std::move(cache)};
}

GradBundle bn_backward_l2(const Tensor& d_y, const BnCache& cache, const BnParams& params, Layout layout) {
  if (cache.mode != BnMode::L2) {
    throw ModeError("bn_backward_l2 received a cache from mode " + std::string(to_string(cache.mode)));
  }
  check_backward_inputs(d_y, cache, params, layout);
  const double m = static_cast<double>(pooled_count(d_y, layout));

  const Tensor d_xhat = grad_x_hat(d_y, params, layout);
  const Tensor normalizer = broadcast(cache.normalizer, d_y, layout);
  const Tensor centered = mul(cache.x_hat, normalizer);  // x - mu_B

  // dl/dsigma^2 = sum dl/dx_hat * (x - mu) * -1/2 * (sigma^2 + eps)^(-3/2)
  Tensor d_var = pooled_sum(mul(d_xhat, centered), layout);
  for (std::size_t c = 0; c < d_var.size(); ++c) {
    const double n = cache.normalizer[c];
    d_var[c] *= -0.5 / (n * n * n);
  }
  // dl/dmu = sum dl/dx_hat * -1/sqrt(sigma^2 + eps)
  Tensor d_mu = pooled_sum(d_xhat, layout);
  for (std::size_t c = 0; c < d_mu.size(); ++c) d_mu[c] *= -1.0 / cache.normalizer[c];

  // dl/dx = dl/dx_hat / sqrt(sigma^2 + eps) + dl/dsigma^2 * 2(x - mu)/m + dl/dmu / m
  Tensor d_x = add(add(div(d_xhat, normalizer), mul(broadcast(d_var, d_y, layout), scale(centered, 2.0 / m))),
                   scale(broadcast(d_mu, d_y, layout), 1.0 / m));

  GradBundle out;
  out.d_input = std::move(d_x);
  fill_affine_grads(out, d_y, cache, params, layout);
  return out;
}

GradBundle bn_backward_l1_naive(const Tensor& d_y, const BnCache& cache, const BnParams& params,
                                Layout layout) {
  if (!is_l1(cache.mode)) throw ModeError("bn_backward_l1_naive received an L2 cache");
  check_backward_inputs(d_y, cache, params, layout);
  const double m = static_cast<double>(pooled_count(d_y, layout));
  const double k = cache.mode == BnMode::L1Compensated ? kGaussianDeviationRatio : 1.0;

  const Tensor d_xhat = grad_x_hat(d_y, params, layout);
  const Tensor normalizer = broadcast(cache.normalizer, d_y, layout);
  const Tensor centered = mul(cache.x_hat, normalizer);
  const Tensor sgn = sign(centered);  // sgn(x_i - mu_B)
  const Tensor sgn_sum = pooled_sum(sgn, layout);

  // dl/dsigma = sum dl/dx_hat * (x - mu) * -1/(sigma + eps)^2
  Tensor d_sigma = pooled_sum(mul(d_xhat, centered), layout);
  for (std::size_t c = 0; c < d_sigma.size(); ++c) {
    const double n = cache.normalizer[c];
    d_sigma[c] *= -1.0 / (n * n);
  }
  // dl/dmu = sum dl/dx_hat * -1/(sigma + eps) + dl/dsigma * dsigma/dmu,
  // dsigma/dmu = -(k/m) sum sgn(x_j - mu)
  Tensor d_mu = pooled_sum(d_xhat, layout);
  for (std::size_t c = 0; c < d_mu.size(); ++c) {
    d_mu[c] = -d_mu[c] / cache.normalizer[c] - d_sigma[c] * k * sgn_sum[c] / m;
  }

  // x_i reaches the loss through x_hat_i, sigma_B (holding mu fixed: k/m * sgn_i) and mu_B (1/m).
  // The sum-of-signs part of dsigma/dx_i is already carried by dl/dmu above.
  Tensor d_x = add(add(mul(broadcast(d_sigma, d_y, layout), scale(sgn, k / m)), div(d_xhat, normalizer)),
                   scale(broadcast(d_mu, d_y, layout), 1.0 / m));

  GradBundle out;
  out.d_input = std::move(d_x);
  fill_affine_grads(out, d_y, cache, params, layout);
  return out;
}

GradBundle bn_backward_l1_simplified(const Tensor& d_y, const BnCache& cache, const BnParams& params,
                                     Layout layout) {
  if (!is_l1(cache.mode)) throw ModeError("bn_backward_l1_simplified received an L2 cache");
  check_backward_inputs(d_y, cache, params, layout);
  const double k = cache.mode == BnMode::L1Compensated ? kGaussianDeviationRatio : 1.0;

  const Tensor g = grad_x_hat(d_y, params, layout);
  const Tensor sgn = sign(cache.x_hat);
  const Tensor mean_g = pooled_mean(g, layout);
  Tensor mean_gx = pooled_mean(mul(g, cache.x_hat), layout);
  if (k != 1.0) mean_gx = scale(mean_gx, k);
  const Tensor mean_sgn = pooled_mean(sgn, layout);

  Tensor inner = sub(sub(g, broadcast(mean_g, g, layout)),
                     mul(broadcast(mean_gx, g, layout), sub(sgn, broadcast(mean_sgn, g, layout))));

  GradBundle out;
  out.d_input = div(inner, broadcast(cache.normalizer, g, layout));
  fill_affine_grads(out, d_y, cache, params, layout);
  return out;
}

GradBundle bn_backward(const Tensor& d_y, const BnCache& cache, const BnParams& params, Layout layout) {
  return cache.mode == BnMode::L2 ? bn_backward_l2(d_y, cache, params, layout)
                                  : bn_backward_l1_simplified(d_y, cache, params, layout);
}

BnState update_running_stats(const BnState& state, const Tensor& mu_b, const Tensor& sigma_b) {
  if (!state.initialized()) throw StateError("running statistics are not initialized");
  if (mu_b.shape() != state.running_mu.shape() || sigma_b.shape() != state.running_sigma.shape()) {
    throw ShapeError("batch statistics length does not match running statistics");
  }
  const double a = state.momentum;
  BnState next = state;
  for (std::size_t c = 0; c < mu_b.size(); ++c) {
    next.running_mu[c] = a * state.running_mu[c] + (1.0 - a) * mu_b[c];
    next.running_sigma[c] = a * state.running_sigma[c] + (1.0 - a) * sigma_b[c];
  }
  return next;
}

FusedAffine fuse_inference(const BnParams& params, const BnState& state) {
  if (!state.initialized()) throw StateError("inference requires initialized running statistics");
  const std::size_t features = state.running_mu.size();
  params.validate(features);
  if (state.running_sigma.size() != features) throw StateError("running statistics have inconsistent lengths");

  FusedAffine f{Tensor({features}), Tensor({features})};
  for (std::size_t c = 0; c < features; ++c) {
    const double sigma = state.running_sigma[c];
    const double denom =
        params.mode == BnMode::L2 ? std::sqrt(sigma * sigma + params.epsilon) : sigma + params.epsilon;
    const double gamma = params.use_affine ? params.gamma[c] : 1.0;
    const double beta = params.use_affine ? params.beta[c] : 0.0;
    f.scale[c] = gamma / denom;
    f.shift[c] = beta - gamma * state.running_mu[c] / denom;
  }
  return f;
}

Tensor bn_forward_infer(const Tensor& x, const BnParams& params, const BnState& state, Layout layout) {
  const auto fused = fuse_inference(params, state);
  if (feature_count(x, layout) != fused.scale.size()) {
    throw ShapeError("input feature count does not match running statistics");
  }
  return add(mul(x, broadcast(fused.scale, x, layout)), broadcast(fused.shift, x, layout));
}

}  // namespace l1bn
