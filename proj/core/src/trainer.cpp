#include "l1bn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "l1bn/errors.hpp"

namespace l1bn {

namespace {

Tensor add_bias(const Tensor& z, const Tensor& bias) { return add(z, expand(bias, z.shape(), {0})); }

Tensor relu(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Activations kept for the backward pass of one hidden block.
struct BlockTrace {
  Tensor input;                // block input h
  Tensor pre_norm;             // dense output z
  Tensor pre_relu;             // BN output (or z)
  std::optional<BnCache> cache;
};

struct ForwardTrace {
  std::vector<BlockTrace> blocks;
  Tensor last_input;
  Tensor logits;
};

ForwardTrace run_forward(const Mlp& model, const Tensor& x, Phase phase) {
  ForwardTrace trace;
  const auto& dense = model.dense();
  const auto& norms = model.norms();
  Tensor h = x;
  for (std::size_t l = 0; l + 1 < dense.size(); ++l) {
    BlockTrace block;
    block.input = h;
    block.pre_norm = add_bias(matmul(h, dense[l].weights), dense[l].bias);
    if (norms[l]) {
      if (phase == Phase::Train) {
        auto fwd = bn_forward_train(block.pre_norm, norms[l]->params, Layout::Features2d);
        block.pre_relu = std::move(fwd.y);
        block.cache = std::move(fwd.cache);
      } else {
        block.pre_relu = bn_forward_infer(block.pre_norm, norms[l]->params, norms[l]->state, Layout::Features2d);
      }
    } else {
      block.pre_relu = block.pre_norm;
    }
    h = relu(block.pre_relu);
    trace.blocks.push_back(std::move(block));
  }
  trace.last_input = h;
  trace.logits = add_bias(matmul(h, dense.back().weights), dense.back().bias);
  return trace;
}

void check_input(const Tensor& batch, std::size_t input_dim) {
  if (batch.rank() != 2 || batch.shape()[1] != input_dim) {
    throw ShapeError("batch must be n x " + std::to_string(input_dim) + ", got " + shape_to_string(batch.shape()));
  }
}

void check_batch(const Tensor& batch, std::span<const std::size_t> labels, std::size_t input_dim) {
  check_input(batch, input_dim);
  if (labels.size() != batch.shape()[0]) throw ShapeError("label count does not match batch size");
}

// Rows `order` of `data` as a contiguous batch.
std::pair<Tensor, std::vector<std::size_t>> gather(const Dataset& data, std::span<const std::size_t> order) {
  const std::size_t dim = data.inputs.shape()[1];
  Tensor batch({order.size(), dim});
  std::vector<std::size_t> labels(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t src = order[r];
    std::copy_n(data.inputs.data().begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                batch.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
    labels[r] = data.labels[src];
  }
  return {std::move(batch), std::move(labels)};
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

}  // namespace

DenseLayer DenseLayer::make(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer;
  layer.weights = normal_sample(rng, {in, out}, 0.0, std::sqrt(2.0 / static_cast<double>(in)));
  layer.bias = Tensor({out}, 0.0);
  layer.weights_velocity = Tensor({in, out}, 0.0);
  layer.bias_velocity = Tensor({out}, 0.0);
  return layer;
}

MlpSpec MlpSpec::uniform(std::vector<std::size_t> widths, std::optional<BnMode> mode, std::uint64_t seed) {
  MlpSpec spec;
  spec.widths = std::move(widths);
  spec.bn_modes.assign(spec.hidden_layers(), mode);
  spec.seed = seed;
  return spec;
}

void MlpSpec::validate() const {
  if (widths.size() < 3) throw ShapeError("an MLP needs an input width, at least one hidden layer and an output width");
  if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
    throw ShapeError("layer widths must be positive");
  }
  if (bn_modes.size() != hidden_layers()) throw ShapeError("bn_modes needs one entry per hidden layer");
  if (!(bn_epsilon > 0.0)) throw DomainError("bn_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw DomainError("bn_momentum must lie in [0, 1]");
}

double SgdConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (auto e : decay_epochs) {
    if (epoch >= e) lr *= decay_factor;
  }
  return lr;
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
  if (batch_size < 2) throw BatchSizeError("batch size must be at least 2");
  if (!(weight_decay >= 0.0)) throw DomainError("weight decay must be nonnegative");
}

std::pair<Dataset, Dataset> SyntheticTask::generate() const {
  if (classes < 2 || input_dim == 0) throw ShapeError("task needs at least 2 classes and a positive input dimension");
  if (train_count < classes || test_count < classes) throw ShapeError("each split needs at least one sample per class");
  if (!(cluster_std >= 0.0) || !(center_spread >= 0.0)) throw DomainError("spreads must be nonnegative");

  Rng rng(seed);
  const Tensor centers = normal_sample(rng, {classes, input_dim}, 0.0, center_spread);

  auto make_split = [&](std::size_t count) {
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = i % classes;
    shuffle(labels, rng);
    Tensor inputs({count, input_dim});
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < input_dim; ++j) {
        inputs[i * input_dim + j] = centers[labels[i] * input_dim + j] + cluster_std * rng.normal();
      }
    }
    return Dataset{std::move(inputs), std::move(labels)};
  };
  Dataset train = make_split(train_count);
  Dataset test = make_split(test_count);
  return {std::move(train), std::move(test)};
}

Mlp::Mlp(const MlpSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng(spec_.seed);
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    dense_.push_back(DenseLayer::make(spec_.widths[l], spec_.widths[l + 1], rng));
  }
  for (std::size_t l = 0; l < spec_.hidden_layers(); ++l) {
    const auto& mode = spec_.bn_modes[l];
    if (!mode) {
      norms_.emplace_back();
      continue;
    }
    const std::size_t width = spec_.widths[l + 1];
    // Plain L1 starts gamma at 0.8 so its initial output scale is closer to L2's.
    const double gamma_init = *mode == BnMode::L1 ? 0.8 : 1.0;
    BnLayer bn;
    bn.params = BnParams::make(width, *mode, spec_.use_affine, gamma_init, spec_.bn_epsilon);
    bn.state = BnState::make(width, spec_.bn_momentum);
    bn.gamma_velocity = Tensor({width}, 0.0);
    bn.beta_velocity = Tensor({width}, 0.0);
    norms_.emplace_back(std::move(bn));
  }
}

double mean_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - top);
    total += std::log(z) + top - row[labels[i]];
  }
  return total / static_cast<double>(n);
}

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    if (static_cast<std::size_t>(std::max_element(row, row + k) - row) == labels[i]) ++correct;
  }
  return correct;
}

Tensor forward_logits(const Mlp& model, const Tensor& x, Phase phase) {
  check_input(x, model.spec().widths.front());
  return run_forward(model, x, phase).logits;
}

std::vector<Tensor> hidden_preactivations(const Mlp& model, const Tensor& x, Phase phase) {
  check_input(x, model.spec().widths.front());
  auto trace = run_forward(model, x, phase);
  std::vector<Tensor> out;
  for (auto& block : trace.blocks) out.push_back(std::move(block.pre_norm));
  return out;
}

double batch_loss(const Mlp& model, const Tensor& batch, std::span<const std::size_t> labels) {
  check_batch(batch, labels, model.spec().widths.front());
  return mean_cross_entropy(run_forward(model, batch, Phase::Train).logits, labels);
}

StepResult forward_backward_step(const Mlp& model, const Tensor& batch, std::span<const std::size_t> labels) {
  check_batch(batch, labels, model.spec().widths.front());
  const auto& dense = model.dense();
  const auto& norms = model.norms();
  const std::size_t n = labels.size();

  ForwardTrace trace = run_forward(model, batch, Phase::Train);
  StepResult result;
  result.loss = mean_cross_entropy(trace.logits, labels);
  if (!std::isfinite(result.loss)) throw DivergenceError("non-finite training loss");
  result.correct = count_correct(trace.logits, labels);

  // d(loss)/d(logits) = (softmax - onehot) / n
  const std::size_t k = trace.logits.shape()[1];
  Tensor d_out(trace.logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = trace.logits.data().data() + i * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - top);
    for (std::size_t c = 0; c < k; ++c) {
      d_out[i * k + c] = (std::exp(row[c] - top) / z - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }

  result.grads.dense.resize(dense.size());
  result.grads.norms.resize(norms.size());
  result.batch_stats.resize(norms.size());

  auto dense_backward = [&](std::size_t l, const Tensor& input, const Tensor& d_z) {
    result.grads.dense[l].d_weights = matmul(transpose(input), d_z);
    result.grads.dense[l].d_bias = reduce_sum(d_z, {0});
    return matmul(d_z, transpose(dense[l].weights));
  };

  Tensor d_h = dense_backward(dense.size() - 1, trace.last_input, d_out);
  for (std::size_t l = trace.blocks.size(); l-- > 0;) {
    const BlockTrace& block = trace.blocks[l];
    Tensor d_u = d_h;
    for (std::size_t i = 0; i < d_u.size(); ++i) {
      if (!(block.pre_relu[i] > 0.0)) d_u[i] = 0.0;
    }
    Tensor d_z = d_u;
    if (norms[l]) {
      GradBundle g = bn_backward(d_u, *block.cache, norms[l]->params, Layout::Features2d);
      d_z = std::move(g.d_input);
      g.d_input = Tensor();
      result.grads.norms[l] = std::move(g);
      result.batch_stats[l] = BatchStatistics{block.cache->mu_b, block.cache->sigma_b};
    }
    d_h = dense_backward(l, block.input, d_z);
  }
  return result;
}

void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                double learning_rate, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_update: parameter, gradient and velocity lengths differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= learning_rate * velocity[i];
  }
}

void apply_sgd(Mlp& model, const MlpGrads& grads, const SgdConfig& config, double learning_rate) {
  auto& dense = model.dense();
  auto& norms = model.norms();
  if (grads.dense.size() != dense.size() || grads.norms.size() != norms.size()) {
    throw ShapeError("gradient set does not match the model");
  }
  for (std::size_t l = 0; l < dense.size(); ++l) {
    Tensor g = grads.dense[l].d_weights;
    if (config.weight_decay > 0.0) g = add(g, scale(dense[l].weights, config.weight_decay));
    sgd_update(dense[l].weights.data(), g.data(), dense[l].weights_velocity.data(), learning_rate, config.momentum);
    sgd_update(dense[l].bias.data(), grads.dense[l].d_bias.data(), dense[l].bias_velocity.data(), learning_rate,
               config.momentum);
  }
  for (std::size_t l = 0; l < norms.size(); ++l) {
    if (!norms[l] || !norms[l]->params.use_affine) continue;
    if (!grads.norms[l]) throw ShapeError("missing normalization gradients for layer " + std::to_string(l));
    sgd_update(norms[l]->params.gamma.data(), grads.norms[l]->d_gamma.data(), norms[l]->gamma_velocity.data(),
               learning_rate, config.momentum);
    sgd_update(norms[l]->params.beta.data(), grads.norms[l]->d_beta.data(), norms[l]->beta_velocity.data(),
               learning_rate, config.momentum);
  }
}

void update_running_stats(Mlp& model, const StepResult& step) {
  auto& norms = model.norms();
  for (std::size_t l = 0; l < norms.size(); ++l) {
    if (!norms[l] || !step.batch_stats[l]) continue;
    norms[l]->state = update_running_stats(norms[l]->state, step.batch_stats[l]->mu_b, step.batch_stats[l]->sigma_b);
  }
}

double evaluate_accuracy(const Mlp& model, const Dataset& data, Phase phase, std::size_t batch_size) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t correct = 0;
  std::size_t begin = 0;
  while (begin < order.size()) {
    std::size_t end = std::min(order.size(), begin + batch_size);
    // Train-mode statistics need at least two rows; fold a trailing single row into the previous batch.
    if (phase == Phase::Train && order.size() - end == 1) end = order.size();
    auto [batch, labels] = gather(data, std::span(order).subspan(begin, end - begin));
    correct += count_correct(run_forward(model, batch, phase).logits, labels);
    begin = end;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainingRecord run_experiment(const SyntheticTask& task, const MlpSpec& spec, const SgdConfig& config) {
  auto [train, test] = task.generate();
  return run_experiment(train, test, spec, config);
}

TrainingRecord train_model(Mlp& model, const Dataset& train, const Dataset& test, const SgdConfig& config,
                           std::uint64_t seed) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainingRecord record;
  Rng order_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t steps = train.size() / config.batch_size;
  if (steps == 0) throw BatchSizeError("training set is smaller than one batch");

  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      shuffle(order, order_rng);
      const double lr = config.learning_rate_at(epoch);
      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t s = 0; s < steps; ++s) {
        auto [batch, labels] = gather(train, std::span(order).subspan(s * config.batch_size, config.batch_size));
        StepResult step = forward_backward_step(model, batch, labels);
        update_running_stats(model, step);
        apply_sgd(model, step.grads, config, lr);
        loss_sum += step.loss;
        correct += step.correct;
      }
      EpochRecord e;
      e.epoch = epoch + 1;
      e.train_loss = loss_sum / static_cast<double>(steps);
      e.eval_loss = mean_cross_entropy(forward_logits(model, train.inputs, Phase::Infer), train.labels);
      e.train_acc = static_cast<double>(correct) / static_cast<double>(steps * config.batch_size);
      e.test_acc = evaluate_accuracy(model, test, Phase::Infer, config.batch_size);
      record.epochs.push_back(e);
    }
    record.final_test_acc = record.epochs.empty() ? evaluate_accuracy(model, test, Phase::Infer, config.batch_size)
                                                  : record.epochs.back().test_acc;
    // One batch over the whole split keeps the batch statistics close to population values.
    record.final_test_acc_train_mode = evaluate_accuracy(model, test, Phase::Train, test.size());
  } catch (const DivergenceError& e) {
    record.diverged = true;
    record.failure = e.what();
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

TrainingRecord run_experiment(const Dataset& train, const Dataset& test, const MlpSpec& spec,
                              const SgdConfig& config) {
  Mlp model(spec);
  return train_model(model, train, test, config, spec.seed);
}

ExperimentPreset sanity_preset(std::uint64_t seed) {
  ExperimentPreset p;
  p.task.classes = 2;
  p.task.input_dim = 8;
  p.task.center_spread = 3.0;
  p.task.cluster_std = 1.0;
  p.task.train_count = 1000;
  p.task.test_count = 1000;
  p.task.seed = seed;
  p.widths = {8, 32, 2};
  p.config.learning_rate = 0.01;
  p.config.batch_size = 64;
  p.config.epochs = 10;
  return p;
}

ExperimentPreset parity_preset(std::uint64_t seed) {
  ExperimentPreset p;
  p.task.classes = 10;
  p.task.input_dim = 16;
  p.task.center_spread = 1.0;
  p.task.cluster_std = 1.0;
  p.task.train_count = 4000;
  p.task.test_count = 2000;
  p.task.seed = seed;
  p.widths = {16, 64, 64, 64, 64, 64, 10};
  p.config.learning_rate = 0.1;
  p.config.batch_size = 64;
  p.config.epochs = 12;
  p.config.decay_epochs = {8};
  return p;
}

}  // namespace l1bn
