#include "selfdistill/calibrate.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "selfdistill/trainer.hpp"

namespace selfdistill {

ConstantLossProbe::ConstantLossProbe(double l_det, double l_distill) : l_det_(l_det), l_distill_(l_distill) {
  if (!(l_det > 0.0) || !(l_distill > 0.0) || !std::isfinite(l_det) || !std::isfinite(l_distill)) {
    throw InvalidInput("constant-loss probe needs positive finite losses");
  }
}

double ConstantLossProbe::mean_ratio(double lambda) const {
  const double penalized = lambda * l_distill_;
  return penalized / (l_det_ + penalized);
}

double ConstantLossProbe::closed_form_lambda(double ratio) const {
  return ratio * l_det_ / ((1.0 - ratio) * l_distill_);
}

CalibrationBracketError::CalibrationBracketError(double target, double lo, double hi, double ratio_lo, double ratio_hi)
    : Error(fmt::format("target ratio {} is not bracketed on [{}, {}]: r({}) = {}, r({}) = {}", target, lo, hi, lo,
                        ratio_lo, hi, ratio_hi)),
      ratio_lo_(ratio_lo),
      ratio_hi_(ratio_hi) {}

void CalibrationOptions::validate() const {
  if (!(target > 0.0 && target < 1.0)) throw InvalidInput(fmt::format("target ratio must lie in (0, 1), got {}", target));
  if (!(lo > 0.0) || !(hi > lo) || !std::isfinite(hi)) {
    throw InvalidInput(fmt::format("calibration bracket needs 0 < lo < hi, got [{}, {}]", lo, hi));
  }
  if (!(tolerance > 0.0)) throw InvalidInput("calibration tolerance must be positive");
  if (max_probes < 1) throw InvalidInput("calibration needs at least one probe");
}

CalibrationResult calibrate_lambda(const RatioProbe& probe, const CalibrationOptions& options) {
  options.validate();
  CalibrationResult result;
  double a = options.lo;
  double b = options.hi;
  double best_gap = std::numeric_limits<double>::infinity();

  auto run = [&](double lambda) {
    const double r = probe.mean_ratio(lambda);
    ++result.probes_used;
    const double gap = std::abs(r - options.target);
    if (gap < best_gap) {
      best_gap = gap;
      result.lambda_star = lambda;
      result.achieved_ratio = r;
    }
    return r;
  };
  auto record = [&](double lambda, double r) { result.trace.push_back({lambda, r, a, b}); };
  auto done = [&]() {
    result.converged = best_gap <= options.tolerance;
    return result;
  };

  const double r_lo = run(a);
  record(a, r_lo);
  if (std::abs(r_lo - options.target) <= options.tolerance || result.probes_used >= options.max_probes) return done();

  const double r_hi = run(b);
  record(b, r_hi);
  if (std::abs(r_hi - options.target) <= options.tolerance) return done();
  if (!(r_lo < options.target && options.target < r_hi)) {
    throw CalibrationBracketError(options.target, options.lo, options.hi, r_lo, r_hi);
  }

  double prev_lambda = b;
  double prev_ratio = r_hi;
  while (result.probes_used < options.max_probes) {
    const double mid = 0.5 * (a + b);
    const double r = run(mid);
    const bool increasing = mid > prev_lambda;
    if ((increasing && r < prev_ratio - options.tolerance) || (!increasing && r > prev_ratio + options.tolerance)) {
      result.warnings.push_back(fmt::format("non-monotone ratio: r({}) = {} but r({}) = {}", prev_lambda, prev_ratio,
                                            mid, r));
    }
    if (r < options.target) {
      a = mid;
    } else {
      b = mid;
    }
    record(mid, r);
    if (std::abs(r - options.target) <= options.tolerance) break;
    prev_lambda = mid;
    prev_ratio = r;
  }
  return done();
}

double ratio_trace(const RunLog& log, long long from_step, long long to_step) {
  if (to_step <= from_step) {
    throw InvalidRange(fmt::format("ratio range [{}, {}) is empty", from_step, to_step));
  }
  double total = 0.0;
  long long count = 0;
  for (const RunLogRow& row : log.rows()) {
    if (row.step >= from_step && row.step < to_step) {
      total += row.ratio;
      ++count;
    }
  }
  if (count != to_step - from_step) {
    throw InvalidRange(fmt::format("run log covers {} of the {} steps in [{}, {})", count, to_step - from_step,
                                   from_step, to_step));
  }
  return total / static_cast<double>(count);
}

}  // namespace selfdistill
