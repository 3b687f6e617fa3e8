#include <set>

#include <gtest/gtest.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/schedule.hpp"

using namespace selfdistill;

namespace {

TEST(LrAt, PiecewiseFixtures) {
  const LrSchedule s{0.1, 100, 0.1, 50, 300};
  EXPECT_EQ(lr_at(s, 0), 0.1);
  EXPECT_EQ(lr_at(s, 99), 0.1);
  EXPECT_NEAR(lr_at(s, 100), 0.01, 1e-17);
  EXPECT_NEAR(lr_at(s, 149), 0.01, 1e-17);
  EXPECT_NEAR(lr_at(s, 150), 0.001, 1e-18);
  EXPECT_EQ(lr_at(s, 299) > 0.0, true);
  EXPECT_EQ(lr_at(s, 300), 0.0);
  EXPECT_EQ(lr_at(s, 10'000), 0.0);
}

TEST(LrAt, NonIncreasingAndZeroAtEnd) {
  const LrSchedule s{0.05, 37, 0.5, 11, 150};
  double prev = lr_at(s, 0);
  for (Step t = 1; t < 200; ++t) {
    const double now = lr_at(s, t);
    EXPECT_LE(now, prev) << t;
    prev = now;
  }
  EXPECT_EQ(lr_at(s, s.end_step), 0.0);
}

TEST(LambdaAt, StepFunction) {
  const LambdaSchedule s{20'000, 120'000, 75.0, 80.0};
  EXPECT_EQ(lambda_at(s, 0), 0.0);
  EXPECT_EQ(lambda_at(s, 19'999), 0.0);
  EXPECT_EQ(lambda_at(s, 20'000), 75.0);
  EXPECT_EQ(lambda_at(s, 119'999), 75.0);
  EXPECT_EQ(lambda_at(s, 120'000), 80.0);
  const LambdaSchedule fixed{10, 50, 3.0, 3.0};
  for (Step t = 10; t < 100; ++t) EXPECT_EQ(lambda_at(fixed, t), 3.0);
}

TEST(LambdaAt, ChangePointsAreExactlyTheThresholds) {
  const LambdaSchedule s{7, 23, 1.5, 2.5};
  std::set<double> values;
  std::set<Step> changes;
  for (Step t = 0; t < 40; ++t) {
    values.insert(lambda_at(s, t));
    if (t > 0 && lambda_at(s, t) != lambda_at(s, t - 1)) changes.insert(t);
  }
  EXPECT_EQ(values, (std::set<double>{0.0, 1.5, 2.5}));
  EXPECT_EQ(changes, (std::set<Step>{7, 23}));
}

TEST(LambdaAt, ScalingThresholdsPreservesTransitions) {
  const LambdaSchedule s{3, 11, 1.0, 2.0};
  const PhasePlan plan{3, 17};
  for (Step m : {2, 5, 1000}) {
    const LambdaSchedule scaled{s.warmup_end_step * m, s.switch_step * m, 1.0, 2.0};
    const PhasePlan scaled_plan{plan.freeze_end_step * m, plan.total_steps * m};
    for (Step t = 0; t < plan.total_steps; ++t) {
      EXPECT_EQ(lambda_at(s, t), lambda_at(scaled, t * m));
      EXPECT_EQ(is_frozen(plan, t), is_frozen(scaled_plan, t * m));
    }
  }
}

TEST(IsFrozen, HalfOpenInterval) {
  const PhasePlan p{20'000, 170'000};
  EXPECT_TRUE(is_frozen(p, 0));
  EXPECT_TRUE(is_frozen(p, 19'999));
  EXPECT_FALSE(is_frozen(p, 20'000));
  const PhasePlan none{0, 10};
  for (Step t = 0; t < 10; ++t) EXPECT_FALSE(is_frozen(none, t));
}

TEST(Milestones, ProportionalToTotal) {
  const auto m = proportional_milestones(170'000);
  EXPECT_EQ(m.freeze_end, 20'000);
  EXPECT_EQ(m.switch_step, 120'000);
  EXPECT_EQ(m.end, 170'000);
  const auto d = proportional_milestones(680);
  EXPECT_EQ(d.freeze_end, 80);
  EXPECT_EQ(d.switch_step, 480);
  EXPECT_EQ(LambdaSchedule{}.switch_step, d.switch_step);
  EXPECT_EQ(PhasePlan{}.freeze_end_step, d.freeze_end);
  EXPECT_EQ(LrSchedule{}.end_step, d.end);
  EXPECT_THROW(proportional_milestones(0), InvalidConfig);
}

TEST(ScheduleValidation, RejectsInconsistentFields) {
  EXPECT_NO_THROW(LrSchedule{}.validate());
  EXPECT_THROW((LrSchedule{0.0, 1, 0.1, 1, 2}.validate()), InvalidConfig);
  EXPECT_THROW((LrSchedule{0.1, 5, 0.1, 1, 5}.validate()), InvalidConfig);
  EXPECT_THROW((LrSchedule{0.1, 1, 1.0, 1, 5}.validate()), InvalidConfig);
  EXPECT_THROW((LrSchedule{0.1, 1, 0.5, 0, 5}.validate()), InvalidConfig);
  EXPECT_THROW((LambdaSchedule{10, 5, 1, 1}.validate()), InvalidConfig);
  EXPECT_THROW((LambdaSchedule{0, 5, -1, 1}.validate()), InvalidConfig);
  EXPECT_THROW((PhasePlan{11, 10}.validate()), InvalidConfig);
}

}  // namespace
