#pragma once

#include <ostream>

#include <nlohmann/json.hpp>

#include "l1bn/cost_model.hpp"
#include "l1bn/grad_check.hpp"
#include "l1bn/ratio.hpp"
#include "l1bn/trainer.hpp"

namespace l1bn {

// Bumped whenever a field is renamed or removed from any JSON document below.
inline constexpr int kSchemaVersion = 1;

nlohmann::json report_json(const GradReport& report);
nlohmann::json report_json(const RatioReport& report, bool include_histogram = true);
nlohmann::json report_json(const TrainingRecord& record);
nlohmann::json report_json(const CostProfile& profile);

// channel,sigma_l2,sigma_l1,ratio
void write_csv(std::ostream& out, const RatioReport& report);
// epoch,train_loss,eval_loss,train_acc,test_acc
void write_csv(std::ostream& out, const TrainingRecord& record);
// layer,m,h,w,c,mode,<per-norm counts>,l2_time_ns,l2_power_uw,l1_time_ns,l1_power_uw
void write_csv(std::ostream& out, const CostProfile& profile);

}  // namespace l1bn
