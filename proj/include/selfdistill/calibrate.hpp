#pragma once

// Bisection on the distillation coefficient so that the mean share of the
// penalized distillation loss in the total loss, lambda * L_distill / L_total,
// hits a target ratio.

#include <cstddef>
#include <string>
#include <vector>

#include "selfdistill/errors.hpp"

namespace selfdistill {

class RunLog;

// r(lambda): mean over a fixed number of iterations of lambda * L_distill / L_total.
// Implementations must be deterministic in lambda.
class RatioProbe {
 public:
  virtual ~RatioProbe() = default;
  virtual double mean_ratio(double lambda) const = 0;
};

// Constant losses: r(lambda) = lambda * d / (det + lambda * d).
class ConstantLossProbe final : public RatioProbe {
 public:
  ConstantLossProbe(double l_det, double l_distill);
  double mean_ratio(double lambda) const override;

  // lambda solving lambda d / (det + lambda d) = ratio.
  double closed_form_lambda(double ratio) const;

 private:
  double l_det_;
  double l_distill_;
};

struct ProbeRecord {
  double lambda = 0.0;
  double ratio = 0.0;
  // Bracket after this probe.
  double lo = 0.0;
  double hi = 0.0;
};

struct CalibrationResult {
  double lambda_star = 0.0;
  double achieved_ratio = 0.0;
  std::size_t probes_used = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<ProbeRecord> trace;
};

class CalibrationBracketError : public Error {
 public:
  CalibrationBracketError(double target, double lo, double hi, double ratio_lo, double ratio_hi);

  double ratio_lo() const { return ratio_lo_; }
  double ratio_hi() const { return ratio_hi_; }

 private:
  double ratio_lo_;
  double ratio_hi_;
};

struct CalibrationOptions {
  double target = 0.45;
  double lo = 1.0;
  double hi = 100.0;
  double tolerance = 0.02;
  std::size_t max_probes = 20;

  void validate() const;
};

// Probes lo, then hi, then midpoints. Returns as soon as a probe is within
// tolerance, otherwise the best lambda seen once max_probes is spent.
// Throws CalibrationBracketError when r(lo) < target < r(hi) fails.
CalibrationResult calibrate_lambda(const RatioProbe& probe, const CalibrationOptions& options);

// Mean logged ratio over steps [from_step, to_step). Throws InvalidRange if the
// range is empty or not fully covered by the log.
double ratio_trace(const RunLog& log, long long from_step, long long to_step);

}  // namespace selfdistill
