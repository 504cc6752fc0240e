#pragma once

#include <cstddef>
#include <string_view>

#include "l1bn/tensor.hpp"

namespace l1bn {

// Ratio of the standard deviation to the mean absolute deviation of a
// Gaussian, sqrt(pi / 2).
inline constexpr double kGaussianDeviationRatio = 1.25331413731550025121;

enum class BnMode {
  L2,             // root-mean-square deviation, eps under the root
  L1,             // mean absolute deviation, eps added to the deviation
  L1Compensated,  // mean absolute deviation scaled by sqrt(pi/2)
};

// Where statistics are pooled. In both layouts the feature/channel axis is last.
enum class Layout {
  Features2d,  // m x d, pooled over the batch axis
  Channels4d,  // m x h x w x c, pooled over batch and spatial axes (|B| = m*h*w)
};

// Training uses batch statistics; inference uses frozen running statistics.
enum class Phase { Train, Infer };

std::string_view to_string(BnMode mode) noexcept;
std::string_view to_string(Layout layout) noexcept;
// Accepts "l2", "l1", "l1c" (also "l1-compensated"); throws Error otherwise.
BnMode parse_mode(std::string_view text);

constexpr bool is_l1(BnMode mode) noexcept { return mode != BnMode::L2; }

// Plain L1 lets gamma absorb the scale difference; without gamma the
// compensated variant restores the L2 scale.
constexpr BnMode default_l1_mode(bool use_affine) noexcept {
  return use_affine ? BnMode::L1 : BnMode::L1Compensated;
}

AxisSet batch_axes(Layout layout);
// Throws LayoutError for ranks other than 2 and 4.
Layout layout_for_rank(std::size_t rank);
// Throws LayoutError when x's rank does not belong to `layout`.
std::size_t feature_count(const Tensor& x, Layout layout);
std::size_t pooled_count(const Tensor& x, Layout layout);

struct BnParams {
  Tensor gamma;  // per feature
  Tensor beta;   // per feature
  double epsilon = 1e-5;
  BnMode mode = BnMode::L2;
  bool use_affine = true;

  static BnParams make(std::size_t features, BnMode mode, bool use_affine = true, double gamma_init = 1.0,
                       double epsilon = 1e-5);

  std::size_t features() const noexcept { return gamma.size(); }
  // Throws ShapeError/DomainError when the invariants do not hold for `features`.
  void validate(std::size_t features) const;
};

struct BnState {
  Tensor running_mu;
  Tensor running_sigma;  // deviation in the metric of the mode that produced it
  double momentum = 0.9;

  static BnState make(std::size_t features, double momentum = 0.9);
  bool initialized() const noexcept { return !running_mu.empty() && !running_sigma.empty(); }
};

struct BnCache {
  Tensor mu_b;
  Tensor sigma_b;     // L2: sqrt(variance); L1: mean |x - mu|, times sqrt(pi/2) when compensated
  Tensor normalizer;  // L2: sqrt(variance + eps); L1: sigma_b + eps
  Tensor x_hat;
  BnMode mode = BnMode::L2;
  double epsilon = 0.0;
};

struct GradBundle {
  Tensor d_input;
  Tensor d_gamma;  // zero when the affine transform is disabled
  Tensor d_beta;
};

struct L2Stats {
  Tensor mean;
  Tensor variance;  // biased, divisor |B|
};

struct L1Stats {
  Tensor mean;
  Tensor deviation;  // mean absolute deviation about the mean
};

struct ForwardResult {
  Tensor y;
  BnCache cache;
};

// Throw BatchSizeError when fewer than two values are pooled per feature.
L2Stats l2_batch_stats(const Tensor& x, Layout layout);
L1Stats l1_batch_stats(const Tensor& x, Layout layout, bool compensate);

ForwardResult bn_forward_train(const Tensor& x, const BnParams& params, Layout layout);

// Chain rule for the L2 layer, written out term by term.
GradBundle bn_backward_l2(const Tensor& d_y, const BnCache& cache, const BnParams& params, Layout layout);

// Chain rule for the L1 layers through d(loss)/d(sigma_B) and d(loss)/d(mu_B).
GradBundle bn_backward_l1_naive(const Tensor& d_y, const BnCache& cache, const BnParams& params,
                                Layout layout);

// Closed form of the L1 backward:
//   dx = 1/(sigma_B + eps) * { g - mean(g) - k * mean(g * x_hat) * [sgn(x_hat) - mean(sgn(x_hat))] }
// with g = dl/dx_hat and k = sqrt(pi/2) in compensated mode, 1 otherwise.
GradBundle bn_backward_l1_simplified(const Tensor& d_y, const BnCache& cache, const BnParams& params,
                                     Layout layout);

// L2 cache -> bn_backward_l2, L1 caches -> bn_backward_l1_simplified.
GradBundle bn_backward(const Tensor& d_y, const BnCache& cache, const BnParams& params, Layout layout);

// mu <- a*mu + (1-a)*mu_B, sigma <- a*sigma + (1-a)*sigma_B.
BnState update_running_stats(const BnState& state, const Tensor& mu_b, const Tensor& sigma_b);

struct FusedAffine {
  Tensor scale;
  Tensor shift;
};

// Folds running statistics and (gamma, beta) into one multiply-add per feature.
FusedAffine fuse_inference(const BnParams& params, const BnState& state);

// Throws StateError when `state` has not been initialized.
Tensor bn_forward_infer(const Tensor& x, const BnParams& params, const BnState& state, Layout layout);

}  // namespace l1bn
