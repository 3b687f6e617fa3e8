#pragma once

// Piecewise-constant training schedules: step-decayed learning rate, the
// stepwise distillation coefficient, and the frozen-backbone phase.

#include <cstdint>

namespace selfdistill {

using Step = std::int64_t;

struct LrSchedule {
  double base_rate = 0.1;
  Step decay_start_step = 480;
  double decay_factor = 0.1;
  Step decay_interval = 100;
  Step end_step = 680;

  // Throws InvalidConfig.
  void validate() const;
  bool operator==(const LrSchedule&) const = default;
};

// base_rate before decay_start_step, multiplied by decay_factor at
// decay_start_step and again every decay_interval steps, 0 from end_step on.
double lr_at(const LrSchedule& schedule, Step step);

struct LambdaSchedule {
  Step warmup_end_step = 80;
  Step switch_step = 480;
  double lambda1 = 62.875;
  double lambda2 = 67.0667;

  void validate() const;
  bool operator==(const LambdaSchedule&) const = default;
};

// 0 during warmup, lambda1 until switch_step, lambda2 afterwards.
double lambda_at(const LambdaSchedule& schedule, Step step);

struct PhasePlan {
  Step freeze_end_step = 80;
  Step total_steps = 680;

  void validate() const;
  bool operator==(const PhasePlan&) const = default;
};

// Backbone frozen on [0, freeze_end_step).
bool is_frozen(const PhasePlan& plan, Step step);

// Milestones at the 20/170 (freeze and warmup) and 120/170 (decay start and
// lambda switch) fractions of total_steps. total_steps = 170000 gives
// 20000 / 120000 / 170000 exactly.
struct Milestones {
  Step freeze_end = 0;
  Step switch_step = 0;
  Step end = 0;
};
Milestones proportional_milestones(Step total_steps);

}  // namespace selfdistill
