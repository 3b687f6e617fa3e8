#include "selfdistill/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"

namespace selfdistill {
namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

void require_same_shape(const Distribution& o, const Distribution& q) {
  if (o.rows() != q.rows() || o.cols() != q.cols()) {
    throw ShapeError(fmt::format("distributions are {}x{} and {}x{}", o.rows(), o.cols(), q.rows(), q.cols()));
  }
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput(fmt::format("temperature must be positive and finite, got {}", temperature));
  }
}

// Per-element contributions; the divergence is their sum.
void kl_terms(std::span<const double> o, std::span<const double> q, std::span<double> out) {
  for (std::size_t i = 0; i < o.size(); ++i) {
    out[i] = o[i] > 0.0 ? o[i] * std::log2(o[i] / std::max(q[i], kProbabilityFloor)) : 0.0;
  }
}

// Symmetric in (o, q) element by element, so the sum is symmetric exactly.
void js_terms(std::span<const double> o, std::span<const double> q, std::span<double> out) {
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double m = 0.5 * (o[i] + q[i]);
    const double a = o[i] > 0.0 ? o[i] * std::log2(o[i] / m) : 0.0;
    const double b = q[i] > 0.0 ? q[i] * std::log2(q[i] / m) : 0.0;
    out[i] = 0.5 * (a + b);
  }
}

double kl_raw(std::span<const double> o, std::span<const double> q, std::vector<double>& scratch) {
  scratch.resize(o.size());
  kl_terms(o, q, scratch);
  return kernels::sum(scratch);
}

double js_raw(std::span<const double> o, std::span<const double> q, std::vector<double>& scratch) {
  scratch.resize(o.size());
  js_terms(o, q, scratch);
  return std::max(0.0, kernels::sum(scratch));
}

// Backprop through softmax(x / T): dx_i = (1/T) o_i (g_i - <o, g>).
void softmax_backward(std::span<const double> o, std::span<const double> g, double temperature, double upstream,
                      std::span<double> dx) {
  const double mean = kernels::dot(o, g);
  const double c = upstream / temperature;
  for (std::size_t i = 0; i < o.size(); ++i) dx[i] = c * o[i] * (g[i] - mean);
}

enum class ProbLoss { kl, js };

LossValue probability_loss(ProbLoss kind, const FeaturePyramid& k, const FeaturePyramid& ke, double temperature,
                           Gradients grads) {
  k.validate();
  ke.validate();
  require_same_shape(k, ke);
  require_temperature(temperature);

  const double inv_n = 1.0 / static_cast<double>(k.total_elements());
  LossValue out;
  if (grads != Gradients::none) out.gradient_wrt_first = FeaturePyramid::zeros(k.shapes());
  if (grads == Gradients::both) out.gradient_wrt_second = FeaturePyramid::zeros(k.shapes());

  std::vector<double> scratch;
  std::vector<double> go;
  std::vector<double> gq;
  double total = 0.0;
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    const Distribution o = normalize(k.scale(p), temperature);
    const Distribution q = normalize(ke.scale(p), temperature);
    const auto ov = o.values();
    const auto qv = q.values();

    double upstream = 0.0;
    if (kind == ProbLoss::kl) {
      total += kl_raw(ov, qv, scratch);
      upstream = inv_n;
    } else {
      const double d = js_raw(ov, qv, scratch);
      const double dist = std::sqrt(d);
      total += dist;
      upstream = d > 0.0 ? inv_n * 0.5 / dist : 0.0;
    }
    if (grads == Gradients::none) continue;

    go.assign(ov.size(), 0.0);
    gq.assign(ov.size(), 0.0);
    if (kind == ProbLoss::kl) {
      for (std::size_t i = 0; i < ov.size(); ++i) {
        if (ov[i] <= 0.0) continue;
        const double qf = std::max(qv[i], kProbabilityFloor);
        go[i] = std::log2(ov[i] / qf) + kInvLn2;
        if (qv[i] >= kProbabilityFloor) gq[i] = -ov[i] / qv[i] * kInvLn2;
      }
    } else {
      // d JS / d o_i = 0.5 log2(o_i / m_i), and likewise for q.
      for (std::size_t i = 0; i < ov.size(); ++i) {
        const double m = 0.5 * (ov[i] + qv[i]);
        if (ov[i] > 0.0) go[i] = 0.5 * std::log2(ov[i] / m);
        if (qv[i] > 0.0) gq[i] = 0.5 * std::log2(qv[i] / m);
      }
    }
    softmax_backward(ov, go, temperature, upstream, out.gradient_wrt_first->scale(p).values());
    if (grads == Gradients::both) {
      softmax_backward(qv, gq, temperature, upstream, out.gradient_wrt_second->scale(p).values());
    }
  }
  out.value = total * inv_n;
  return out;
}

}  // namespace

std::string_view to_string(DistillLoss id) {
  switch (id) {
    case DistillLoss::mse:
      return "mse";
    case DistillLoss::kl:
      return "kl";
    case DistillLoss::js:
      return "js";
  }
  return "unknown";
}

DistillLoss parse_distill_loss(std::string_view name) {
  if (name == "mse") return DistillLoss::mse;
  if (name == "kl") return DistillLoss::kl;
  if (name == "js") return DistillLoss::js;
  throw InvalidConfig(fmt::format("unknown distillation loss '{}' (expected mse, kl or js)", name));
}

Distribution::Distribution(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows_ == 0 || cols_ == 0 || values_.size() != rows_ * cols_) {
    throw InvalidInput(fmt::format("distribution of {}x{} cannot hold {} values", rows_, cols_, values_.size()));
  }
  double total = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("distribution entries must be finite and nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput(fmt::format("distribution sums to {}, not 1", total));
}

Distribution normalize(const Map2D& scale_map, double temperature) {
  require_temperature(temperature);
  if (scale_map.size() == 0) throw InvalidInput("cannot normalize an empty map");
  const auto x = scale_map.values();
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidInput("cannot normalize a map with non-finite entries");
  }
  const double top = kernels::max(x);
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::exp((x[i] - top) / temperature);
  kernels::scale(1.0 / kernels::sum(p), p);
  return Distribution(Distribution::Unchecked{}, scale_map.rows(), scale_map.cols(), std::move(p));
}

double kl_divergence(const Distribution& o, const Distribution& q) {
  require_same_shape(o, q);
  std::vector<double> scratch;
  return kl_raw(o.values(), q.values(), scratch);
}

double js_divergence(const Distribution& o, const Distribution& q) {
  require_same_shape(o, q);
  std::vector<double> scratch;
  return js_raw(o.values(), q.values(), scratch);
}

double js_distance(const Distribution& o, const Distribution& q) { return std::sqrt(js_divergence(o, q)); }

LossValue mse_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, Gradients grads) {
  k.validate();
  ke.validate();
  require_same_shape(k, ke);
  const double inv_n = 1.0 / static_cast<double>(k.total_elements());

  LossValue out;
  double total = 0.0;
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    total += kernels::squared_distance(k.scale(p).values(), ke.scale(p).values());
  }
  out.value = total * inv_n;
  if (grads == Gradients::none) return out;

  out.gradient_wrt_first = FeaturePyramid::zeros(k.shapes());
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    auto g = out.gradient_wrt_first->scale(p).values();
    const auto a = k.scale(p).values();
    const auto b = ke.scale(p).values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (a[i] - b[i]) * inv_n;
  }
  if (grads == Gradients::both) {
    out.gradient_wrt_second = out.gradient_wrt_first;
    for (std::size_t p = 0; p < k.scale_count(); ++p) kernels::scale(-1.0, out.gradient_wrt_second->scale(p).values());
  }
  return out;
}

LossValue kl_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, double temperature, Gradients grads) {
  return probability_loss(ProbLoss::kl, k, ke, temperature, grads);
}

LossValue js_distill_loss(const FeaturePyramid& k, const FeaturePyramid& ke, double temperature, Gradients grads) {
  return probability_loss(ProbLoss::js, k, ke, temperature, grads);
}

LossValue distill_loss(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke, double temperature,
                       Gradients grads) {
  switch (id) {
    case DistillLoss::mse:
      return mse_distill_loss(k, ke, grads);
    case DistillLoss::kl:
      return kl_distill_loss(k, ke, temperature, grads);
    case DistillLoss::js:
      return js_distill_loss(k, ke, temperature, grads);
  }
  throw InvalidInput("unknown distillation loss id");
}

GradientCheckReport loss_gradient_check_report(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke,
                                               double epsilon, double temperature) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw InvalidInput(fmt::format("gradient-check epsilon must lie in [1e-6, 1e-3], got {}", epsilon));
  }
  const LossValue analytic = distill_loss(id, k, ke, temperature, Gradients::first);

  GradientCheckReport report;
  FeaturePyramid probe = k;
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    auto x = probe.scale(p).values();
    const auto g = analytic.gradient_wrt_first->scale(p).values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + epsilon;
      const double up = distill_loss(id, probe, ke, temperature).value;
      x[i] = saved - epsilon;
      const double down = distill_loss(id, probe, ke, temperature).value;
      x[i] = saved;

      const double fd = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(g[i]), std::abs(fd), 1e-8});
      const double rel = std::abs(g[i] - fd) / denom;
      if (rel > report.max_relative_error) report = {rel, p, i, g[i], fd};
    }
  }
  return report;
}

double loss_gradient_check(DistillLoss id, const FeaturePyramid& k, const FeaturePyramid& ke, double epsilon,
                           double temperature) {
  return loss_gradient_check_report(id, k, ke, epsilon, temperature).max_relative_error;
}

}  // namespace selfdistill
