#include "selfdistill/schedule.hpp"

#include <cmath>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"

namespace selfdistill {

void LrSchedule::validate() const {
  if (!(base_rate > 0.0) || !std::isfinite(base_rate)) {
    throw InvalidConfig(fmt::format("lr.base_rate must be positive, got {}", base_rate));
  }
  if (decay_start_step < 0) throw InvalidConfig("lr.decay_start_step must be nonnegative");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
    throw InvalidConfig(fmt::format("lr.decay_factor must lie in (0, 1), got {}", decay_factor));
  }
  if (decay_interval <= 0) throw InvalidConfig("lr.decay_interval must be positive");
  if (end_step <= 0) throw InvalidConfig("lr.end_step must be positive");
  if (decay_start_step >= end_step) {
    throw InvalidConfig(fmt::format("lr.decay_start_step ({}) must be below lr.end_step ({})", decay_start_step,
                                    end_step));
  }
}

double lr_at(const LrSchedule& schedule, Step step) {
  if (step >= schedule.end_step) return 0.0;
  if (step < schedule.decay_start_step) return schedule.base_rate;
  const Step decays = 1 + (step - schedule.decay_start_step) / schedule.decay_interval;
  return schedule.base_rate * std::pow(schedule.decay_factor, static_cast<double>(decays));
}

void LambdaSchedule::validate() const {
  if (warmup_end_step < 0) throw InvalidConfig("lambda.warmup_end_step must be nonnegative");
  if (switch_step <= 0) throw InvalidConfig("lambda.switch_step must be positive");
  if (warmup_end_step > switch_step) {
    throw InvalidConfig(fmt::format("lambda.warmup_end_step ({}) must not exceed lambda.switch_step ({})",
                                    warmup_end_step, switch_step));
  }
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) throw InvalidConfig("lambda.lambda1 must be nonnegative");
  if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) throw InvalidConfig("lambda.lambda2 must be nonnegative");
}

double lambda_at(const LambdaSchedule& schedule, Step step) {
  if (step < schedule.warmup_end_step) return 0.0;
  if (step < schedule.switch_step) return schedule.lambda1;
  return schedule.lambda2;
}

void PhasePlan::validate() const {
  if (total_steps < 0) throw InvalidConfig("total_steps must be nonnegative");
  if (freeze_end_step < 0) throw InvalidConfig("phase.freeze_end_step must be nonnegative");
  if (freeze_end_step > total_steps) {
    throw InvalidConfig(fmt::format("phase.freeze_end_step ({}) must not exceed total_steps ({})", freeze_end_step,
                                    total_steps));
  }
}

bool is_frozen(const PhasePlan& plan, Step step) { return step < plan.freeze_end_step; }

Milestones proportional_milestones(Step total_steps) {
  if (total_steps <= 0) throw InvalidConfig("total_steps must be positive");
  return {total_steps * 20 / 170, total_steps * 120 / 170, total_steps};
}

}  // namespace selfdistill
