#include "l1bn/report_io.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

namespace l1bn {

namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json counts_json(const OpCounts& c) {
  return {{"sign", c.sign}, {"abs", c.abs}, {"square", c.square}, {"root", c.root}};
}

json weighted_json(const Weighted& w) { return {{"time_ns", w.time_ns}, {"power_uw", w.power_uw}}; }

void full_precision(std::ostream& out) { out << std::setprecision(std::numeric_limits<double>::max_digits10); }

}  // namespace

json report_json(const GradReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"name", e.name},
                       {"max_rel_err", e.stats.max_rel_err},
                       {"max_abs_err", e.stats.max_abs_err},
                       {"worst_index", e.stats.worst_index}});
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "gradcheck"},
          {"mode", to_string(r.mode)},
          {"layout", to_string(r.layout)},
          {"shape", r.shape},
          {"seed", r.seed},
          {"step", r.step},
          {"resamples", r.resamples},
          {"max_rel_err", r.max_rel_err},
          {"max_abs_err", r.max_abs_err},
          {"worst_param", r.worst_param},
          {"worst_index", r.worst_index},
          {"entries", entries},
          {"backward_agreement", optional_number(r.backward_agreement)}};
}

json report_json(const RatioReport& r, bool include_histogram) {
  json doc = {{"schema_version", kSchemaVersion},
              {"kind", "ratio"},
              {"sample_count", r.sample_count},
              {"channels", r.ratios.size()},
              {"mean_ratio", r.mean_ratio},
              {"gaussian_ratio", kGaussianDeviationRatio},
              {"deviation_from_gaussian", r.deviation_from_gaussian},
              {"ratios", r.ratios}};
  if (include_histogram) {
    doc["histogram"] = {{"edges", r.histogram.edges},
                        {"counts_l2", r.histogram.counts_l2},
                        {"counts_l1", r.histogram.counts_l1},
                        {"log_scaled", true}};
  }
  return doc;
}

json report_json(const TrainingRecord& rec) {
  json epochs = json::array();
  for (const auto& e : rec.epochs) {
    epochs.push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval_loss", e.eval_loss}, {"train_acc", e.train_acc}, {"test_acc", e.test_acc}});
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "training"},
          {"final_test_acc", rec.final_test_acc},
          {"final_test_acc_train_mode", rec.final_test_acc_train_mode},
          {"wall_seconds", rec.wall_seconds},
          {"diverged", rec.diverged},
          {"failure", rec.failure},
          {"epochs", epochs}};
}

json report_json(const CostProfile& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"name", l.shape.name},
                      {"m", l.shape.m},
                      {"h", l.shape.h},
                      {"w", l.shape.w},
                      {"c", l.shape.c},
                      {"mode", l.shape.mode ? json(to_string(*l.shape.mode)) : json("none")},
                      {"l2", {{"forward", counts_json(l.l2.forward)}, {"backward", counts_json(l.l2.backward)}}},
                      {"l1", {{"forward", counts_json(l.l1.forward)}, {"backward", counts_json(l.l1.backward)}}},
                      {"l2_cost", weighted_json(l.l2_cost)},
                      {"l1_cost", weighted_json(l.l1_cost)}});
  }
  const auto time_ratio = p.time_ratio();
  const auto saving = p.power_saving();
  json rounded = {{"time_ratio", time_ratio ? json(std::round(*time_ratio * 10.0) / 10.0) : json(nullptr)},
                  {"power_saving", saving ? json(std::round(*saving * 10.0) / 10.0) : json(nullptr)}};
  return {{"schema_version", kSchemaVersion},
          {"kind", "cost"},
          {"roots_included", p.roots_included},
          {"layers", layers},
          {"totals",
           {{"l2", {{"counts", counts_json(p.l2_total)}, {"cost", weighted_json(p.l2)}}},
            {"l1", {{"counts", counts_json(p.l1_total)}, {"cost", weighted_json(p.l1)}}}}},
          {"time_ratio", optional_number(time_ratio)},
          {"power_saving", optional_number(saving)},
          {"rounded", rounded}};
}

void write_csv(std::ostream& out, const RatioReport& r) {
  full_precision(out);
  out << "channel,sigma_l2,sigma_l1,ratio\n";
  for (std::size_t c = 0; c < r.ratios.size(); ++c) {
    out << c << ',' << r.sigma_l2[c] << ',' << r.sigma_l1[c] << ',' << r.ratios[c] << '\n';
  }
}

void write_csv(std::ostream& out, const TrainingRecord& rec) {
  full_precision(out);
  out << "epoch,train_loss,eval_loss,train_acc,test_acc\n";
  for (const auto& e : rec.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.eval_loss << ',' << e.train_acc << ',' << e.test_acc << '\n';
  }
}

void write_csv(std::ostream& out, const CostProfile& p) {
  full_precision(out);
  out << "layer,m,h,w,c,mode,l2_square,l2_root,l1_abs,l1_sign,l2_time_ns,l2_power_uw,l1_time_ns,l1_power_uw\n";
  for (const auto& l : p.layers) {
    const auto l2 = l.l2.total();
    const auto l1 = l.l1.total();
    out << l.shape.name << ',' << l.shape.m << ',' << l.shape.h << ',' << l.shape.w << ',' << l.shape.c << ','
        << (l.shape.mode ? to_string(*l.shape.mode) : "none") << ',' << l2.square << ',' << l2.root << ','
        << l1.abs << ',' << l1.sign << ',' << l.l2_cost.time_ns << ',' << l.l2_cost.power_uw << ','
        << l.l1_cost.time_ns << ',' << l.l1_cost.power_uw << '\n';
  }
}

}  // namespace l1bn
