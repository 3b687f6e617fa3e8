#pragma once

// Divergences between per-scale probability maps and the distillation
// losses built on them, with analytic gradients.
//
// Logarithms are base 2 throughout, so KL is in bits and the Jensen-Shannon
// divergence lies in [0, 1]. Feature maps become distributions through a
// temperature softmax over the flattened scale.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "selfdistill/tensor.hpp"

namespace selfdistill {

enum class DistillLoss { mse, kl, js };

std::string_view to_string(DistillLoss id);
// Throws InvalidConfig for an unknown name.
DistillLoss parse_distill_loss(std::string_view name);

// q is floored at this value before it divides anything in KL.
inline constexpr double kProbabilityFloor = 1e-12;

// Nonnegative 2D map summing to one (within 1e-9).
class Distribution {
 public:
  // Validates the invariants; throws InvalidInput on violation.
  Distribution(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }

 private:
  struct Unchecked {};
  Distribution(Unchecked, std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {}
  friend Distribution normalize(const Map2D& scale_map, double temperature);

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

// Softmax of x / temperature over all elements of the map, max-subtracted.
Distribution normalize(const Map2D& scale_map, double temperature = 1.0);

double kl_divergence(const Distribution& o, const Distribution& q);
double js_divergence(const Distribution& o, const Distribution& q);
double js_distance(const Distribution& o, const Distribution& q);

enum class Gradients { none, first, both };

struct LossValue {
  double value = 0.0;
  // d value / d first pyramid argument, when requested.
  std::optional<FeaturePyramid> gradient_wrt_first;
  // d value / d second pyramid argument, when Gradients::both.
  std::optional<FeaturePyramid> gradient_wrt_second;
};

// (1/N) sum_p ||k^p - ke^p||^2
LossValue mse_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, Gradients grads = Gradients::none);

// (1/N) sum_p KL(softmax(k^p) || softmax(ke^p))
LossValue kl_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, double temperature = 1.0,
                          Gradients grads = Gradients::none);

// (1/N) sum_p sqrt(JS(softmax(k^p), softmax(ke^p))). Where a scale's JS
// divergence is exactly zero its sqrt slope is taken as 0.
LossValue js_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, double temperature = 1.0,
                          Gradients grads = Gradients::none);

LossValue distill_loss(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke, double temperature = 1.0,
                       Gradients grads = Gradients::none);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_scale = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences w.r.t. every element of k, relative error with
// denominator max(|analytic|, |numeric|, 1e-8). epsilon must be in [1e-6, 1e-3].
GradientCheckReport loss_gradient_check_report(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke,
                                               double epsilon, double temperature = 1.0);

double loss_gradient_check(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke, double epsilon,
                           double temperature = 1.0);

}  // namespace selfdistill
