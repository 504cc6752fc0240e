#include "l1bn/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "l1bn/errors.hpp"

namespace l1bn {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  // 1 - uniform() lies in (0, 1], keeping log() finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw DomainError("Rng::below requires n > 0");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

Tensor normal_sample(Rng& rng, const Shape& shape, double mu, double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("normal_sample: sigma must be >= 0");
  Tensor out(shape);
  for (double& v : out.data()) v = mu + sigma * rng.normal();
  return out;
}

Tensor uniform_sample(Rng& rng, const Shape& shape, double lo, double hi) {
  if (!(hi >= lo)) throw DomainError("uniform_sample: hi must be >= lo");
  Tensor out(shape);
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace l1bn
