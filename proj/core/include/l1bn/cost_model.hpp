#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "l1bn/batch_norm.hpp"

namespace l1bn {

enum class Op { Sign, Abs, Square, Root };

struct OpCost {
  double registers = 0.0;
  double dsp_blocks = 0.0;
  double time_ns = 0.0;
  double power_uw = 0.0;
};

// Per-operation overhead of 32-bit float sign/abs/square/root on an FPGA.
// Defaults are the measured reference values (time and power net of a null op).
struct OpCosts {
  OpCost sign{153, 0, 1, 2};
  OpCost abs{337, 0, 1, 6};
  OpCost square{407, 1, 3, 15};
  OpCost root{438, 2, 28, 40};

  const OpCost& operator[](Op op) const noexcept;
  OpCost& operator[](Op op) noexcept;
  // Throws DomainError on any negative entry.
  void validate() const;
};

// Overrides any subset of `base` from JSON of the form
//   {"square": {"time_ns": 3, "power_uw": 15}, ...}
// Unknown keys and negative values are rejected with Error/DomainError.
OpCosts parse_op_costs_json(std::string_view text, OpCosts base = {});
OpCosts load_op_costs(const std::filesystem::path& path, OpCosts base = {});

struct OpCounts {
  std::uint64_t sign = 0;
  std::uint64_t abs = 0;
  std::uint64_t square = 0;
  std::uint64_t root = 0;

  OpCounts& operator+=(const OpCounts& other) noexcept;
  friend OpCounts operator+(OpCounts a, const OpCounts& b) noexcept { return a += b; }
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

struct StepCounts {
  OpCounts forward;
  OpCounts backward;

  OpCounts total() const noexcept { return forward + backward; }
  friend bool operator==(const StepCounts&, const StepCounts&) = default;
};

struct LayerShape {
  std::string name;
  std::uint64_t m = 1;
  std::uint64_t h = 1;  // 1 for dense layers
  std::uint64_t w = 1;
  std::uint64_t c = 1;
  std::optional<BnMode> mode;  // normalization used by the layer; none -> no BN

  std::uint64_t pooled() const noexcept { return m * h * w; }
  void validate() const;
};

// Counting convention, per normalized layer and training step, with
// |B| = m*h*w pooled values and c channels. Every appearance of square,
// |.|, sgn and sqrt-family op per element counts once; values cached in the
// forward pass and reused by the backward pass are not recounted.
//   L2 forward : |B|*c squares for the variance, c roots for sqrt(var + eps)
//   L2 backward: c roots for (var + eps)^(-3/2); the 1/sqrt(var + eps) factor
//                is the cached forward root
//   L1 forward : |B|*c absolute values for the mean absolute deviation
//   L1 backward: |B|*c signs sgn(x_hat)
// The compensated L1 variant only adds a constant multiply and counts as L1.
// Inference folds into a multiply-add and counts nothing.
StepCounts count_ops(const LayerShape& shape, BnMode mode, Phase phase = Phase::Train);

struct Weighted {
  double time_ns = 0.0;
  double power_uw = 0.0;
};

// Sum of count * per-op cost. Roots are skipped unless `include_roots`,
// since they occur once per channel rather than once per element.
Weighted weigh(const OpCounts& counts, const OpCosts& costs, bool include_roots = false);

struct LayerCost {
  LayerShape shape;
  StepCounts l2;
  StepCounts l1;
  Weighted l2_cost;
  Weighted l1_cost;
};

struct CostProfile {
  std::vector<LayerCost> layers;
  OpCounts l2_total;
  OpCounts l1_total;
  Weighted l2;
  Weighted l1;
  bool roots_included = false;

  // L2 time / L1 time; empty when there is nothing to compare.
  std::optional<double> time_ratio() const;
  // 1 - L1 power / L2 power.
  std::optional<double> power_saving() const;
};

// Evaluates both norms for every layer that has a normalization.
CostProfile model_report(const std::vector<LayerShape>& layers, const OpCosts& costs, bool include_roots = false);

// One layer per line: `name m h w c mode`, mode in {l2, l1, l1c, none}.
// Blank lines and text after '#' are ignored. Throws ParseError with the
// offending line number.
std::vector<LayerShape> parse_architecture(std::string_view text);
std::vector<LayerShape> load_architecture(const std::filesystem::path& path);

std::string_view to_string(Op op) noexcept;

}  // namespace l1bn
