#include "l1bn/ratio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "l1bn/errors.hpp"
#include "l1bn/rng.hpp"

namespace l1bn {

LogHistogram log_histogram(std::span<const double> sigma_l2, std::span<const double> sigma_l1, std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  LogHistogram h;
  h.counts_l2.assign(bins, 0);
  h.counts_l1.assign(bins, 0);

  double min_v = std::numeric_limits<double>::infinity();
  double max_v = 0.0;
  for (auto values : {sigma_l2, sigma_l1}) {
    for (double v : values) {
      if (v > 0.0) {
        min_v = std::min(min_v, v);
        max_v = std::max(max_v, v);
      }
    }
  }
  if (!std::isfinite(min_v)) return h;
  double lo = std::log(min_v);
  double hi = std::log(max_v);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
    min_v = std::exp(lo);
    max_v = std::exp(hi);
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  h.edges.push_back(min_v);
  for (std::size_t b = 1; b < bins; ++b) h.edges.push_back(std::exp(lo + width * static_cast<double>(b)));
  h.edges.push_back(max_v);

  auto fill = [&](std::span<const double> values, std::vector<std::size_t>& counts) {
    for (double v : values) {
      if (!(v > 0.0)) continue;
      auto b = static_cast<std::size_t>((std::log(v) - lo) / width);
      counts[std::min(b, bins - 1)]++;
    }
  };
  fill(sigma_l2, h.counts_l2);
  fill(sigma_l1, h.counts_l1);
  return h;
}

RatioReport channelwise_ratio_map(const Tensor& x, Layout layout, std::size_t min_pooled) {
  const std::size_t pooled = pooled_count(x, layout);
  if (pooled < std::max<std::size_t>(min_pooled, 2)) {
    throw StatisticsError("ratio statistics need at least " + std::to_string(min_pooled) +
                          " pooled values per channel, got " + std::to_string(pooled));
  }
  const auto l2 = l2_batch_stats(x, layout);
  const auto l1 = l1_batch_stats(x, layout, false);

  RatioReport r;
  r.sample_count = pooled;
  for (std::size_t c = 0; c < l2.variance.size(); ++c) {
    const double s2 = std::sqrt(l2.variance[c]);
    const double s1 = l1.deviation[c];
    if (!(s1 > 0.0)) throw StatisticsError("channel " + std::to_string(c) + " has zero deviation");
    r.sigma_l2.push_back(s2);
    r.sigma_l1.push_back(s1);
    r.ratios.push_back(s2 / s1);
  }
  r.mean_ratio = std::accumulate(r.ratios.begin(), r.ratios.end(), 0.0) / static_cast<double>(r.ratios.size());
  r.deviation_from_gaussian = r.mean_ratio - kGaussianDeviationRatio;
  r.histogram = log_histogram(r.sigma_l2, r.sigma_l1);
  return r;
}

RatioReport gaussian_ratio_trial(std::size_t n, double mu, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_ratio_trial: sigma must be positive");
  if (n < kMinRatioSamples) throw StatisticsError("gaussian_ratio_trial needs n >= 100");
  Rng rng(seed);
  return channelwise_ratio_map(normal_sample(rng, {n, 1}, mu, sigma), Layout::Features2d);
}

RatioReport uniform_ratio_trial(std::size_t n, double lo, double hi, std::uint64_t seed) {
  if (!(hi > lo)) throw DomainError("uniform_ratio_trial: hi must exceed lo");
  if (n < kMinRatioSamples) throw StatisticsError("uniform_ratio_trial needs n >= 100");
  Rng rng(seed);
  return channelwise_ratio_map(uniform_sample(rng, {n, 1}, lo, hi), Layout::Features2d);
}

bool within_gaussian_band(const RatioReport& report, double tolerance) noexcept {
  return std::fabs(report.mean_ratio - kGaussianDeviationRatio) <= tolerance;
}

std::vector<RatioReport> mlp_layer_ratios(const Mlp& model, const Tensor& batch) {
  std::vector<RatioReport> out;
  for (const auto& z : hidden_preactivations(model, batch, Phase::Infer)) {
    out.push_back(channelwise_ratio_map(z, Layout::Features2d, 2));
  }
  return out;
}

}  // namespace l1bn
