// l1bn: gradient checks, ratio statistics, training runs and cost estimates
// for L1/L2 batch normalization. Every subcommand writes its outputs plus a
// manifest.json into the run directory given by --out.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bn/batch_norm.hpp"
#include "l1bn/cost_model.hpp"
#include "l1bn/errors.hpp"
#include "l1bn/grad_check.hpp"
#include "l1bn/ratio.hpp"
#include "l1bn/report_io.hpp"
#include "l1bn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultSeed = 20190611;

enum ExitCode : int { kPass = 0, kFail = 1, kUsage = 2 };

struct Common {
  std::uint64_t seed = kDefaultSeed;
  std::string out;
  std::string format = "json";
};

class RunDir {
 public:
  RunDir(const Common& common, std::string subcommand, json options)
      : root_(common.out.empty() ? fs::path("l1bn-runs") / subcommand : fs::path(common.out)),
        subcommand_(std::move(subcommand)),
        seed_(common.seed),
        options_(std::move(options)) {
    fs::create_directories(root_);
  }

  void write_json(const std::string& name, const json& doc) {
    std::ofstream(path(name)) << doc.dump(2) << '\n';
  }

  template <typename Report>
  void write_csv(const std::string& name, const Report& report) {
    std::ofstream out(path(name));
    l1bn::write_csv(out, report);
  }

  void finish(int status) {
    json manifest = {{"schema_version", l1bn::kSchemaVersion},
                     {"version", L1BN_VERSION},
                     {"subcommand", subcommand_},
                     {"seed", seed_},
                     {"options", options_},
                     {"outputs", outputs_},
                     {"exit_code", status}};
    std::ofstream(root_ / "manifest.json") << manifest.dump(2) << '\n';
  }

 private:
  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return root_ / name;
  }

  fs::path root_;
  std::string subcommand_;
  std::uint64_t seed_;
  json options_;
  std::vector<std::string> outputs_;
};

std::vector<l1bn::BnMode> parse_modes(const std::vector<std::string>& names) {
  std::vector<l1bn::BnMode> modes;
  for (const auto& n : names) modes.push_back(l1bn::parse_mode(n));
  return modes;
}

std::string csv_of(const auto& report) {
  std::ostringstream out;
  l1bn::write_csv(out, report);
  return out.str();
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckOptions {
  std::vector<std::string> modes{"l2", "l1", "l1c"};
  std::vector<std::size_t> shape;
  double threshold = 1e-5;
  double step = 1e-6;
  double epsilon = 1e-5;
};

l1bn::Shape default_check_shape(l1bn::BnMode mode) {
  if (mode == l1bn::BnMode::L1Compensated) return {4, 3, 3, 2};
  return {7, 3};
}

int run_gradcheck(const Common& common, const GradcheckOptions& opt) {
  RunDir run(common, "gradcheck",
             {{"modes", opt.modes}, {"shape", opt.shape}, {"threshold", opt.threshold}, {"step", opt.step},
              {"epsilon", opt.epsilon}, {"format", common.format}});
  json reports = json::array();
  bool pass = true;
  for (l1bn::BnMode mode : parse_modes(opt.modes)) {
    l1bn::CheckConfig config;
    config.mode = mode;
    config.shape = opt.shape.empty() ? default_check_shape(mode) : opt.shape;
    config.seed = common.seed;
    config.step = opt.step;
    config.epsilon = opt.epsilon;
    const auto report = l1bn::check_layer(config);
    const bool ok = report.max_rel_err <= opt.threshold;
    if (!ok) {
      std::cerr << "FAIL " << l1bn::to_string(mode) << " shape " << l1bn::shape_to_string(report.shape)
                << ": max_rel_err " << report.max_rel_err << " in " << report.worst_param << l1bn::shape_to_string(report.worst_index)
                << " exceeds " << opt.threshold << '\n';
    }
    pass = pass && ok;
    json doc = l1bn::report_json(report);
    doc["threshold"] = opt.threshold;
    doc["pass"] = ok;
    reports.push_back(doc);
  }
  const json summary = {{"schema_version", l1bn::kSchemaVersion}, {"pass", pass}, {"reports", reports}};
  run.write_json("gradcheck.json", summary);
  std::cout << summary.dump(2) << '\n';
  const int status = pass ? kPass : kFail;
  run.finish(status);
  return status;
}

// --- ratio -----------------------------------------------------------------

struct RatioOptions {
  std::string source = "gaussian";
  std::size_t n = 100000;
  double mu = 0.0;
  double sigma = 1.0;
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> shape{64, 8, 8, 16};
  std::string mode = "l2";
  double tolerance = 0.01;
};

int run_ratio(const Common& common, const RatioOptions& opt) {
  RunDir run(common, "ratio",
             {{"source", opt.source}, {"n", opt.n}, {"mu", opt.mu}, {"sigma", opt.sigma}, {"lo", opt.lo},
              {"hi", opt.hi}, {"shape", opt.shape}, {"mode", opt.mode}, {"tolerance", opt.tolerance},
              {"format", common.format}});

  std::vector<l1bn::RatioReport> reports;
  if (opt.source == "gaussian") {
    reports.push_back(l1bn::gaussian_ratio_trial(opt.n, opt.mu, opt.sigma, common.seed));
  } else if (opt.source == "uniform") {
    reports.push_back(l1bn::uniform_ratio_trial(opt.n, opt.lo, opt.hi, common.seed));
  } else if (opt.source == "channels") {
    l1bn::Rng rng(common.seed);
    const l1bn::Tensor x = l1bn::normal_sample(rng, opt.shape, opt.mu, opt.sigma);
    reports.push_back(l1bn::channelwise_ratio_map(x, l1bn::layout_for_rank(opt.shape.size())));
  } else {
    // Hidden-layer statistics of a network trained on the parity task.
    const auto preset = l1bn::parity_preset(common.seed);
    const auto [train, test] = preset.task.generate();
    const auto spec = preset.spec(l1bn::parse_mode(opt.mode));
    l1bn::Mlp model(spec);
    const auto record = l1bn::train_model(model, train, test, preset.config, spec.seed);
    if (record.diverged) throw l1bn::DivergenceError(record.failure);
    reports = l1bn::mlp_layer_ratios(model, test.inputs);
  }

  json docs = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string name = reports.size() == 1 ? "ratio.csv" : "ratio_layer" + std::to_string(i + 1) + ".csv";
    run.write_csv(name, reports[i]);
    json doc = l1bn::report_json(reports[i]);
    doc["within_gaussian_band"] = l1bn::within_gaussian_band(reports[i], opt.tolerance);
    docs.push_back(doc);
  }
  const json summary = {{"schema_version", l1bn::kSchemaVersion},
                        {"source", opt.source},
                        {"reports", docs}};
  run.write_json("ratio.json", summary);
  if (common.format == "csv") {
    std::cout << csv_of(reports.front());
  } else {
    json brief = json::array();
    for (const auto& d : docs) {
      brief.push_back({{"mean_ratio", d["mean_ratio"]},
                       {"deviation_from_gaussian", d["deviation_from_gaussian"]},
                       {"sample_count", d["sample_count"]},
                       {"channels", d["channels"]},
                       {"within_gaussian_band", d["within_gaussian_band"]}});
    }
    std::cout << json({{"source", opt.source}, {"reports", brief}}).dump(2) << '\n';
  }
  run.finish(kPass);
  return kPass;
}

// --- train -----------------------------------------------------------------

struct TrainOptions {
  std::string preset = "sanity";
  std::vector<std::string> modes{"l2", "l1"};
  std::size_t seeds = 1;
  std::optional<double> learning_rate;
  std::optional<std::size_t> epochs;
  double max_gap = 0.02;
};

int run_train(const Common& common, const TrainOptions& opt) {
  json options = {{"preset", opt.preset}, {"modes", opt.modes}, {"seeds", opt.seeds}, {"max_gap", opt.max_gap},
                  {"format", common.format}};
  if (opt.learning_rate) options["learning_rate"] = *opt.learning_rate;
  if (opt.epochs) options["epochs"] = *opt.epochs;
  RunDir run(common, "train", options);

  json runs = json::array();
  std::map<std::string, std::vector<double>> accuracies;
  std::string last_csv;
  for (const auto& name : opt.modes) {
    const std::optional<l1bn::BnMode> mode =
        name == "none" ? std::nullopt : std::optional<l1bn::BnMode>(l1bn::parse_mode(name));
    const std::string label = mode ? std::string(l1bn::to_string(*mode)) : "none";
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      const std::uint64_t seed = common.seed + s;
      auto preset = opt.preset == "parity" ? l1bn::parity_preset(seed) : l1bn::sanity_preset(seed);
      if (opt.learning_rate) preset.config.learning_rate = *opt.learning_rate;
      if (opt.epochs) preset.config.epochs = *opt.epochs;
      const auto record = l1bn::run_experiment(preset.task, preset.spec(mode), preset.config);
      const std::string csv = "train_" + label + "_seed" + std::to_string(seed) + ".csv";
      run.write_csv(csv, record);
      last_csv = csv_of(record);
      json doc = l1bn::report_json(record);
      doc["mode"] = label;
      doc["seed"] = seed;
      runs.push_back(doc);
      accuracies[label].push_back(record.diverged ? 0.0 : record.final_test_acc);
      std::cerr << label << " seed " << seed << ": test acc " << record.final_test_acc
                << (record.diverged ? " (diverged)" : "") << '\n';
    }
  }

  json means = json::object();
  double lo = 1.0, hi = 0.0;
  std::size_t normalized = 0;
  for (const auto& [label, accs] : accuracies) {
    const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    means[label] = mean;
    if (label != "none") {
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
      ++normalized;
    }
  }
  const std::optional<double> gap = normalized >= 2 ? std::optional<double>(hi - lo) : std::nullopt;
  const bool pass = !gap || *gap <= opt.max_gap;
  const json summary = {{"schema_version", l1bn::kSchemaVersion},
                        {"preset", opt.preset},
                        {"mean_final_test_acc", means},
                        {"parity_gap", gap ? json(*gap) : json(nullptr)},
                        {"max_gap", opt.max_gap},
                        {"pass", pass},
                        {"runs", runs}};
  run.write_json("train.json", summary);
  if (common.format == "csv") {
    std::cout << last_csv;
  } else {
    std::cout << json({{"mean_final_test_acc", means},
                       {"parity_gap", summary["parity_gap"]},
                       {"pass", pass}})
                     .dump(2)
              << '\n';
  }
  const int status = pass ? kPass : kFail;
  run.finish(status);
  return status;
}

// --- cost ------------------------------------------------------------------

struct CostOptions {
  std::string arch;
  std::string costs;
  bool include_roots = false;
};

int run_cost(const Common& common, const CostOptions& opt) {
  RunDir run(common, "cost",
             {{"arch", opt.arch}, {"costs", opt.costs}, {"include_roots", opt.include_roots},
              {"format", common.format}});
  const auto layers = l1bn::load_architecture(opt.arch);
  const auto costs = opt.costs.empty() ? l1bn::OpCosts{} : l1bn::load_op_costs(opt.costs);
  const auto profile = l1bn::model_report(layers, costs, opt.include_roots);
  const json doc = l1bn::report_json(profile);
  run.write_csv("cost.csv", profile);
  run.write_json("cost.json", doc);
  if (common.format == "csv") {
    std::cout << csv_of(profile);
  } else {
    std::cout << json({{"totals", doc["totals"]},
                       {"time_ratio", doc["time_ratio"]},
                       {"power_saving", doc["power_saving"]},
                       {"rounded", doc["rounded"]},
                       {"roots_included", opt.include_roots}})
                     .dump(2)
              << '\n';
  }
  run.finish(kPass);
  return kPass;
}

CLI::Validator mode_validator(bool allow_none) {
  return CLI::Validator(
      [allow_none](std::string& name) -> std::string {
        if (allow_none && name == "none") return {};
        try {
          l1bn::parse_mode(name);
        } catch (const l1bn::Error& e) {
          return e.what();
        }
        return {};
      },
      allow_none ? "MODE|none" : "MODE");
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--seed", common.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", common.out, "Run directory (default l1bn-runs/<subcommand>)");
  cmd->add_option("--format", common.format, "Format of the stdout summary")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"L1/L2 batch normalization experiments"};
  app.set_version_flag("--version", std::string(L1BN_VERSION));
  app.require_subcommand(1);

  Common common;

  GradcheckOptions grad;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic BN gradients with finite differences");
  add_common(gradcheck, common);
  gradcheck->add_option("--modes", grad.modes, "Modes to check (l2, l1, l1c)")
      ->delimiter(',')
      ->check(mode_validator(false))
      ->capture_default_str();
  gradcheck->add_option("--shape", grad.shape, "Input shape for every mode, e.g. 7,3 or 4,3,3,2")->delimiter(',');
  gradcheck->add_option("--threshold", grad.threshold, "Largest accepted relative error")->capture_default_str();
  gradcheck->add_option("--step", grad.step, "Central-difference step")->check(CLI::PositiveNumber)->capture_default_str();
  gradcheck->add_option("--eps", grad.epsilon, "BN epsilon")->check(CLI::NonNegativeNumber)->capture_default_str();

  RatioOptions ratio;
  auto* ratio_cmd = app.add_subcommand("ratio", "Monte Carlo sigma_L2 / sigma_L1 statistics");
  add_common(ratio_cmd, common);
  ratio_cmd->add_option("--source", ratio.source, "Data source")
      ->check(CLI::IsMember({"gaussian", "uniform", "channels", "mlp"}))
      ->capture_default_str();
  ratio_cmd->add_option("--n", ratio.n, "Sample count for gaussian/uniform")->capture_default_str();
  ratio_cmd->add_option("--mu", ratio.mu, "Gaussian mean")->capture_default_str();
  ratio_cmd->add_option("--sigma", ratio.sigma, "Gaussian standard deviation")->capture_default_str();
  ratio_cmd->add_option("--lo", ratio.lo, "Uniform lower bound")->capture_default_str();
  ratio_cmd->add_option("--hi", ratio.hi, "Uniform upper bound")->capture_default_str();
  ratio_cmd->add_option("--shape", ratio.shape, "Tensor shape for channels, m,d or m,h,w,c")
      ->delimiter(',')
      ->capture_default_str();
  ratio_cmd->add_option("--mode", ratio.mode, "Normalization of the mlp source")
      ->check(mode_validator(false))
      ->capture_default_str();
  ratio_cmd->add_option("--tolerance", ratio.tolerance, "Half-width of the Gaussian band")->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train MLPs on a synthetic task");
  add_common(train_cmd, common);
  train_cmd->add_option("--preset", train.preset, "Task and schedule")
      ->check(CLI::IsMember({"sanity", "parity"}))
      ->capture_default_str();
  train_cmd->add_option("--modes", train.modes, "Normalizations (l2, l1, l1c, none)")
      ->delimiter(',')
      ->check(mode_validator(true))
      ->capture_default_str();
  train_cmd->add_option("--seeds", train.seeds, "Number of consecutive seeds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--lr", train.learning_rate, "Override the preset learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", train.epochs, "Override the preset epoch count");
  train_cmd->add_option("--max-gap", train.max_gap, "Largest accepted gap between mean accuracies")
      ->capture_default_str();

  CostOptions cost;
  auto* cost_cmd = app.add_subcommand("cost", "Weighted op counts of L2 vs L1 normalization");
  add_common(cost_cmd, common);
  cost_cmd->add_option("--arch", cost.arch, "Architecture file, one `name m h w c mode` per line")->required();
  cost_cmd->add_option("--costs", cost.costs, "JSON file overriding per-op costs");
  cost_cmd->add_flag("--include-roots", cost.include_roots, "Count per-channel square roots too");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gradcheck) return run_gradcheck(common, grad);
    if (*ratio_cmd) return run_ratio(common, ratio);
    if (*train_cmd) return run_train(common, train);
    if (*cost_cmd) return run_cost(common, cost);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
