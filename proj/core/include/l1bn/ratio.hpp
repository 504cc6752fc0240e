#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "l1bn/batch_norm.hpp"
#include "l1bn/tensor.hpp"
#include "l1bn/trainer.hpp"

namespace l1bn {

inline constexpr std::size_t kHistogramBins = 50;
inline constexpr std::size_t kMinRatioSamples = 100;

// Shared log-spaced bins for both deviation populations, so a scale change
// between them shows up as a shift along the log axis.
struct LogHistogram {
  std::vector<double> edges;  // bins + 1 increasing, positive edges
  std::vector<std::size_t> counts_l2;
  std::vector<std::size_t> counts_l1;
};

LogHistogram log_histogram(std::span<const double> sigma_l2, std::span<const double> sigma_l1,
                           std::size_t bins = kHistogramBins);

// sigma_L2 / sigma_L1 per channel, both deviations taken about the pooled mean
// with divisor |B| and no compensation.
struct RatioReport {
  std::vector<double> sigma_l2;
  std::vector<double> sigma_l1;
  std::vector<double> ratios;
  double mean_ratio = 0.0;
  double deviation_from_gaussian = 0.0;  // mean_ratio - sqrt(pi/2)
  std::size_t sample_count = 0;          // pooled values per channel
  LogHistogram histogram;
};

// Throws StatisticsError when fewer than `min_pooled` values are pooled per
// channel or a channel has zero deviation.
RatioReport channelwise_ratio_map(const Tensor& x, Layout layout, std::size_t min_pooled = kMinRatioSamples);

// n draws from N(mu, sigma^2). Throws DomainError for sigma <= 0 and
// StatisticsError for n < 100.
RatioReport gaussian_ratio_trial(std::size_t n, double mu, double sigma, std::uint64_t seed);

// Non-Gaussian control: n draws from U[lo, hi]. The population ratio is 2/sqrt(3).
RatioReport uniform_ratio_trial(std::size_t n, double lo, double hi, std::uint64_t seed);

bool within_gaussian_band(const RatioReport& report, double tolerance) noexcept;

// Ratio maps of every hidden layer's normalization input for a batch,
// using the model's running statistics.
std::vector<RatioReport> mlp_layer_ratios(const Mlp& model, const Tensor& batch);

}  // namespace l1bn
