#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l1bn/batch_norm.hpp"
#include "l1bn/rng.hpp"
#include "l1bn/tensor.hpp"

namespace l1bn {

struct DenseLayer {
  Tensor weights;  // in x out
  Tensor bias;     // out
  Tensor weights_velocity;
  Tensor bias_velocity;

  // Weights ~ N(0, 2 / fan_in), zero bias.
  static DenseLayer make(std::size_t in, std::size_t out, Rng& rng);
};

struct BnLayer {
  BnParams params;
  BnState state;
  Tensor gamma_velocity;
  Tensor beta_velocity;
};

// One hidden block is Dense -> [BN] -> ReLU; the last layer is Dense -> softmax.
struct MlpSpec {
  std::vector<std::size_t> widths;                // input, hidden..., classes
  std::vector<std::optional<BnMode>> bn_modes;    // one entry per hidden layer
  bool use_affine = true;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;
  std::uint64_t seed = 0;

  static MlpSpec uniform(std::vector<std::size_t> widths, std::optional<BnMode> mode, std::uint64_t seed);
  std::size_t hidden_layers() const noexcept { return widths.size() < 2 ? 0 : widths.size() - 2; }
  void validate() const;
};

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::vector<std::size_t> decay_epochs;  // learning rate is multiplied by decay_factor at each
  double decay_factor = 0.1;
  double weight_decay = 0.0;  // applied to dense weights only

  double learning_rate_at(std::size_t epoch) const;
  void validate() const;
};

struct Dataset {
  Tensor inputs;  // n x input_dim
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

// Balanced Gaussian-cluster classification: class centers ~ N(0, center_spread^2),
// samples = center + N(0, cluster_std^2) per coordinate.
struct SyntheticTask {
  std::size_t classes = 10;
  std::size_t input_dim = 16;
  double center_spread = 1.0;
  double cluster_std = 1.0;
  std::size_t train_count = 4000;
  std::size_t test_count = 2000;
  std::uint64_t seed = 0;

  std::pair<Dataset, Dataset> generate() const;
};

class Mlp {
 public:
  explicit Mlp(const MlpSpec& spec);

  const MlpSpec& spec() const noexcept { return spec_; }
  std::vector<DenseLayer>& dense() noexcept { return dense_; }
  const std::vector<DenseLayer>& dense() const noexcept { return dense_; }
  std::vector<std::optional<BnLayer>>& norms() noexcept { return norms_; }
  const std::vector<std::optional<BnLayer>>& norms() const noexcept { return norms_; }

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> dense_;
  std::vector<std::optional<BnLayer>> norms_;  // one per hidden layer
};

struct DenseGrads {
  Tensor d_weights;
  Tensor d_bias;
};

struct MlpGrads {
  std::vector<DenseGrads> dense;
  std::vector<std::optional<GradBundle>> norms;
};

struct BatchStatistics {
  Tensor mu_b;
  Tensor sigma_b;
};

struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
  MlpGrads grads;
  std::vector<std::optional<BatchStatistics>> batch_stats;
};

// Mean softmax cross-entropy and full backward pass with train-mode BN.
// Throws DivergenceError on a non-finite loss.
StepResult forward_backward_step(const Mlp& model, const Tensor& batch, std::span<const std::size_t> labels);

// Loss only, train-mode BN; used by gradient checks.
double batch_loss(const Mlp& model, const Tensor& batch, std::span<const std::size_t> labels);

Tensor forward_logits(const Mlp& model, const Tensor& x, Phase phase);

// Inputs to each hidden layer's normalization (dense outputs), for inspection.
std::vector<Tensor> hidden_preactivations(const Mlp& model, const Tensor& x, Phase phase);

double mean_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels);

// v <- momentum * v + g; theta <- theta - lr * v.
void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                double learning_rate, double momentum);

void apply_sgd(Mlp& model, const MlpGrads& grads, const SgdConfig& config, double learning_rate);
void update_running_stats(Mlp& model, const StepResult& step);

double evaluate_accuracy(const Mlp& model, const Dataset& data, Phase phase, std::size_t batch_size);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's minibatches
  double eval_loss = 0.0;   // whole training split, inference mode, after the epoch
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainingRecord {
  std::vector<EpochRecord> epochs;
  double final_test_acc = 0.0;             // inference mode (running statistics)
  double final_test_acc_train_mode = 0.0;  // batch statistics of the whole test split
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string failure;
};

// Deterministic given (task, spec, config) apart from wall_seconds. A divergent
// run is reported through `diverged` instead of throwing.
TrainingRecord run_experiment(const SyntheticTask& task, const MlpSpec& spec, const SgdConfig& config);
TrainingRecord run_experiment(const Dataset& train, const Dataset& test, const MlpSpec& spec,
                              const SgdConfig& config);
// Trains `model` in place; `seed` drives the minibatch order. A run that
// diverges leaves the model in its last finite state.
TrainingRecord train_model(Mlp& model, const Dataset& train, const Dataset& test, const SgdConfig& config,
                           std::uint64_t seed);

// Named task/architecture/optimizer bundles shared by the CLI and the test suites.
struct ExperimentPreset {
  SyntheticTask task;
  std::vector<std::size_t> widths;
  SgdConfig config;

  MlpSpec spec(std::optional<BnMode> mode) const { return MlpSpec::uniform(widths, mode, task.seed); }
};

// Two well-separated classes, one hidden layer.
ExperimentPreset sanity_preset(std::uint64_t seed);
// Ten overlapping Gaussian clusters, five hidden layers (six dense layers).
ExperimentPreset parity_preset(std::uint64_t seed);

}  // namespace l1bn
