#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "l1bn/tensor.hpp"

namespace l1bn {

// Seeded generator. The engine is mt19937_64, whose output sequence is fixed
// by the standard; uniform and normal variates are derived here rather than
// through <random> distributions so streams match across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  std::optional<double> spare_;
};

// Throws DomainError for sigma < 0.
Tensor normal_sample(Rng& rng, const Shape& shape, double mu, double sigma);
Tensor uniform_sample(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace l1bn
