#pragma once

// Helpers shared by the unit tests: random fixtures and independent
// reference computations in long double, written from the definitions
// rather than from the library code.

#include <cmath>
#include <cstdint>
#include <vector>

#include "selfdistill/divergence.hpp"
#include "selfdistill/rng.hpp"
#include "selfdistill/tensor.hpp"

namespace testing_support {

using selfdistill::FeaturePyramid;
using selfdistill::Map2D;
using selfdistill::Rng;
using selfdistill::ScaleShape;

inline FeaturePyramid random_pyramid(Rng& rng, const std::vector<ScaleShape>& shapes, double scale = 1.0) {
  FeaturePyramid k = FeaturePyramid::zeros(shapes);
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    for (double& v : k.scale(p).values()) v = scale * rng.normal();
  }
  return k;
}

inline std::vector<ScaleShape> random_shapes(Rng& rng, std::size_t max_scales, std::size_t max_side) {
  std::vector<ScaleShape> shapes(1 + rng.index(max_scales));
  for (auto& s : shapes) s = {1 + rng.index(max_side), 1 + rng.index(max_side)};
  return shapes;
}

inline std::vector<double> random_simplex(Rng& rng, std::size_t n, bool allow_zeros = false) {
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) {
    x = (allow_zeros && rng.uniform() < 0.2) ? 0.0 : -std::log(1.0 - rng.uniform());
    total += x;
  }
  if (total == 0.0) {
    v[0] = 1.0;
    total = 1.0;
  }
  for (auto& x : v) x /= total;
  return v;
}

inline std::vector<long double> oracle_softmax(const Map2D& m, long double temperature) {
  std::vector<long double> out;
  long double z = 0.0L;
  for (double x : m.values()) {
    out.push_back(std::exp(static_cast<long double>(x) / temperature));
    z += out.back();
  }
  for (auto& v : out) v /= z;
  return out;
}

inline long double log2l_ratio(long double a, long double b) { return std::log(a / b) / std::log(2.0L); }

inline long double oracle_kl(const std::vector<long double>& o, const std::vector<long double>& q) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (o[i] > 0.0L) total += o[i] * log2l_ratio(o[i], std::max(q[i], 1e-12L));
  }
  return total;
}

inline long double oracle_js(const std::vector<long double>& o, const std::vector<long double>& q) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const long double m = (o[i] + q[i]) / 2.0L;
    if (o[i] > 0.0L) total += 0.5L * o[i] * log2l_ratio(o[i], m);
    if (q[i] > 0.0L) total += 0.5L * q[i] * log2l_ratio(q[i], m);
  }
  return total;
}

template <typename T>
std::vector<long double> widen(const T& values) {
  return std::vector<long double>(values.begin(), values.end());
}

}  // namespace testing_support
