#include <gtest/gtest.h>

#include "selfdistill/calibrate.hpp"
#include "selfdistill/errors.hpp"
#include "selfdistill/rng.hpp"
#include "selfdistill/trainer.hpp"

using namespace selfdistill;

namespace {

class TableProbe final : public RatioProbe {
 public:
  explicit TableProbe(std::function<double(double)> f) : f_(std::move(f)) {}
  double mean_ratio(double lambda) const override {
    ++calls;
    return f_(lambda);
  }
  mutable int calls = 0;

 private:
  std::function<double(double)> f_;
};

TEST(ConstantProbe, ClosedForm) {
  const ConstantLossProbe probe(1.0, 0.1);
  EXPECT_NEAR(probe.closed_form_lambda(0.45), 0.45 / (0.55 * 0.1), 1e-12);
  EXPECT_NEAR(probe.mean_ratio(probe.closed_form_lambda(0.45)), 0.45, 1e-12);
  EXPECT_THROW(ConstantLossProbe(0.0, 1.0), InvalidInput);
}

TEST(Calibrate, AnalyticFixture) {
  const ConstantLossProbe probe(1.0, 0.1);
  CalibrationOptions opts;
  opts.tolerance = 1e-6;
  opts.max_probes = 60;
  const auto r = calibrate_lambda(probe, opts);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.lambda_star, 8.181818181818182, 1e-3);
  EXPECT_EQ(r.trace.size(), r.probes_used);
}

TEST(Calibrate, RandomTriplesWithinTolerance) {
  Rng rng(17);
  int done = 0;
  while (done < 50) {
    const double det = rng.uniform(0.1, 5.0);
    const double distill = rng.uniform(0.001, 1.0);
    const double target = rng.uniform(0.05, 0.95);
    const ConstantLossProbe probe(det, distill);
    const double exact = probe.closed_form_lambda(target);
    if (exact <= 1.0 || exact >= 100.0) continue;
    ++done;
    CalibrationOptions opts;
    opts.target = target;
    const auto r = calibrate_lambda(probe, opts);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(std::abs(r.achieved_ratio - target), opts.tolerance);
    EXPECT_NEAR(probe.mean_ratio(r.lambda_star), r.achieved_ratio, 1e-15);
  }
}

TEST(Calibrate, BracketFailureReportsEndpointRatios) {
  const ConstantLossProbe probe(1.0, 1e-5);
  try {
    calibrate_lambda(probe, CalibrationOptions{});
    FAIL() << "expected a bracket failure";
  } catch (const CalibrationBracketError& e) {
    EXPECT_NEAR(e.ratio_lo(), probe.mean_ratio(1.0), 1e-15);
    EXPECT_NEAR(e.ratio_hi(), probe.mean_ratio(100.0), 1e-15);
    EXPECT_NE(std::string(e.what()).find("bracket"), std::string::npos);
  }
}

TEST(Calibrate, AcceptsLowerEndpointWithinTolerance) {
  TableProbe probe([](double lambda) { return lambda == 1.0 ? 0.44 : 0.9; });
  const auto r = calibrate_lambda(probe, CalibrationOptions{});
  EXPECT_EQ(r.lambda_star, 1.0);
  EXPECT_EQ(r.probes_used, 1u);
  EXPECT_EQ(probe.calls, 1);
}

TEST(Calibrate, NonMonotoneProbeWarnsAndContinues) {
  TableProbe probe([](double lambda) {
    if (lambda == 1.0) return 0.1;
    if (lambda == 100.0) return 0.9;
    if (lambda < 60.0) return 0.2;
    return lambda < 80.0 ? 0.1 : 0.6;
  });
  CalibrationOptions opts;
  opts.max_probes = 12;
  const auto r = calibrate_lambda(probe, opts);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_LE(r.probes_used, 12u);
}

TEST(Calibrate, ExhaustedBudgetReturnsBestSeen) {
  TableProbe probe([](double lambda) { return lambda < 50.0 ? 0.3 : 0.6; });
  CalibrationOptions opts;
  opts.max_probes = 5;
  const auto r = calibrate_lambda(probe, opts);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.probes_used, 5u);
  EXPECT_NEAR(std::abs(r.achieved_ratio - 0.45), 0.15, 1e-12);
}

TEST(Calibrate, OptionValidation) {
  const ConstantLossProbe probe(1.0, 0.1);
  CalibrationOptions opts;
  opts.target = 0.0;
  EXPECT_THROW(calibrate_lambda(probe, opts), InvalidInput);
  opts.target = 1.0;
  EXPECT_THROW(calibrate_lambda(probe, opts), InvalidInput);
  opts = {};
  opts.lo = 10;
  opts.hi = 5;
  EXPECT_THROW(calibrate_lambda(probe, opts), InvalidInput);
  opts = {};
  opts.max_probes = 0;
  EXPECT_THROW(calibrate_lambda(probe, opts), InvalidInput);
}

TEST(Calibrate, Deterministic) {
  const ConstantLossProbe probe(0.7, 0.02);
  const auto a = calibrate_lambda(probe, CalibrationOptions{});
  const auto b = calibrate_lambda(probe, CalibrationOptions{});
  EXPECT_EQ(a.lambda_star, b.lambda_star);
  EXPECT_EQ(a.achieved_ratio, b.achieved_ratio);
}

RunLog log_with_ratios(std::initializer_list<double> ratios) {
  RunLog log;
  Step t = 0;
  for (double r : ratios) {
    RunLogRow row;
    row.step = t++;
    row.ratio = r;
    log.append(row);
  }
  return log;
}

TEST(RatioTrace, MeansOverRange) {
  EXPECT_NEAR(ratio_trace(log_with_ratios({0.44, 0.44, 0.44}), 0, 3), 0.44, 1e-15);
  EXPECT_EQ(ratio_trace(log_with_ratios({0.1, 0.7, 0.3}), 1, 2), 0.7);
  EXPECT_NEAR(ratio_trace(log_with_ratios({0.4, 0.5}), 0, 2), 0.45, 1e-15);
}

TEST(RatioTrace, RejectsEmptyOrUncoveredRange) {
  const auto log = log_with_ratios({0.1, 0.2});
  EXPECT_THROW(ratio_trace(log, 1, 1), InvalidRange);
  EXPECT_THROW(ratio_trace(log, 0, 5), InvalidRange);
}

}  // namespace
