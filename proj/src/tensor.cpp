#include "selfdistill/tensor.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"

namespace selfdistill {

std::string to_string(const ScaleShape& shape) { return fmt::format("{}x{}", shape.rows, shape.cols); }

ScaleShape parse_scale_shape(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw InvalidConfig("scale shape '" + text + "' is not of the form RxC");
  ScaleShape shape;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto r1 = std::from_chars(begin, begin + x, shape.rows);
  auto r2 = std::from_chars(begin + x + 1, end, shape.cols);
  if (r1.ec != std::errc{} || r1.ptr != begin + x || r2.ec != std::errc{} || r2.ptr != end || shape.rows == 0 ||
      shape.cols == 0) {
    throw InvalidConfig("scale shape '" + text + "' is not of the form RxC with positive integers");
  }
  return shape;
}

Map2D::Map2D(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Map2D::Map2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError(fmt::format("map of {}x{} needs {} values, got {}", rows, cols, rows * cols, values_.size()));
  }
}

FeaturePyramid FeaturePyramid::zeros(std::span<const ScaleShape> shapes) {
  std::vector<Map2D> scales;
  scales.reserve(shapes.size());
  for (const auto& s : shapes) scales.emplace_back(s.rows, s.cols);
  return FeaturePyramid(std::move(scales));
}

std::size_t FeaturePyramid::total_elements() const {
  std::size_t n = 0;
  for (const auto& s : scales_) n += s.size();
  return n;
}

std::vector<ScaleShape> FeaturePyramid::shapes() const {
  std::vector<ScaleShape> out;
  out.reserve(scales_.size());
  for (const auto& s : scales_) out.push_back(s.shape());
  return out;
}

void FeaturePyramid::validate() const {
  if (scales_.empty()) throw InvalidInput("feature pyramid has no scales");
  for (std::size_t p = 0; p < scales_.size(); ++p) {
    if (scales_[p].size() == 0) throw InvalidInput(fmt::format("feature pyramid scale {} is empty", p));
    for (double v : scales_[p].values()) {
      if (!std::isfinite(v)) throw InvalidInput(fmt::format("feature pyramid scale {} has a non-finite entry", p));
    }
  }
}

void require_same_shape(const FeaturePyramid& a, const FeaturePyramid& b) {
  if (a.scale_count() != b.scale_count()) {
    throw ShapeError(fmt::format("pyramids have {} and {} scales", a.scale_count(), b.scale_count()));
  }
  for (std::size_t p = 0; p < a.scale_count(); ++p) {
    if (a.scale(p).shape() != b.scale(p).shape()) {
      throw ShapeError(fmt::format("scale {} is {} in one pyramid and {} in the other", p, to_string(a.scale(p).shape()),
                                   to_string(b.scale(p).shape())));
    }
  }
}

}  // namespace selfdistill
