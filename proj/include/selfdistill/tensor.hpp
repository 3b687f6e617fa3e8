#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace selfdistill {

struct ScaleShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const ScaleShape&) const = default;
};

// "16x16" style text form.
std::string to_string(const ScaleShape& shape);
ScaleShape parse_scale_shape(const std::string& text);

// Row-major single-channel 2D map.
class Map2D {
 public:
  Map2D() = default;
  Map2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Map2D(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  ScaleShape shape() const { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const Map2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Ordered multi-scale set of 2D maps. validate() enforces: at least one scale,
// every scale non-empty, every entry finite.
class FeaturePyramid {
 public:
  FeaturePyramid() = default;
  explicit FeaturePyramid(std::vector<Map2D> scales) : scales_(std::move(scales)) {}

  static FeaturePyramid zeros(std::span<const ScaleShape> shapes);

  std::size_t scale_count() const { return scales_.size(); }
  const Map2D& scale(std::size_t p) const { return scales_.at(p); }
  Map2D& scale(std::size_t p) { return scales_.at(p); }
  const std::vector<Map2D>& scales() const { return scales_; }

  // N: sum of rows * cols over scales.
  std::size_t total_elements() const;
  std::vector<ScaleShape> shapes() const;

  // Throws InvalidInput on an empty pyramid, empty scale or non-finite entry.
  void validate() const;

  bool operator==(const FeaturePyramid&) const = default;

 private:
  std::vector<Map2D> scales_;
};

// Throws ShapeError unless the pyramids have identical scale shapes.
void require_same_shape(const FeaturePyramid& a, const FeaturePyramid& b);

}  // namespace selfdistill
