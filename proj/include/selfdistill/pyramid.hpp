#pragma once

// Ground-truth labels, their rasterization onto pyramid grids, and the small
// learnable label encoder that turns rendered labels into the
// label-enhanced pyramid consumed by the distillation and detection losses.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "selfdistill/tensor.hpp"

namespace selfdistill {

// Pixel coordinates, x to the right, y down. Well-formed: x_min < x_max, y_min < y_max.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool well_formed() const;

  bool operator==(const Box&) const = default;
};

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;

  double area() const { return static_cast<double>(width) * static_cast<double>(height); }
  bool operator==(const ImageSize&) const = default;
};

struct LabelSet {
  std::vector<Box> boxes;
  std::vector<int> classes;
  ImageSize image_size;

  std::size_t size() const { return boxes.size(); }

  // Throws InvalidInput unless lengths agree, every box is well formed and
  // inside the image, and every class id lies in [0, num_classes).
  void validate(int num_classes) const;

  bool operator==(const LabelSet&) const = default;
};

// Filled rectangles of intensity (class + 1) / C on every scale, overlaps
// resolved by maximum. Box edges map to grid cells with floor on the start
// and ceil on the end, so every box covers at least one cell.
FeaturePyramid render_labels(const LabelSet& labels, std::span<const ScaleShape> scale_shapes, int num_classes);

// Per-scale affine map after a 3x3 spatial mixing filter shared by all
// scales: out^p = gain_p * (mix * rendered^p) + bias_p, zero padding.
struct LabelEncoderParams {
  std::vector<double> gain;
  std::vector<double> bias;
  std::array<double, 9> mixing{};

  static LabelEncoderParams identity(std::size_t scale_count);

  std::size_t scale_count() const { return gain.size(); }
  std::size_t parameter_count() const { return gain.size() + bias.size() + mixing.size(); }
  // Throws InvalidConfig on mismatched lengths, non-finite values or >= 1000 parameters.
  void validate() const;

  bool operator==(const LabelEncoderParams&) const = default;
};

FeaturePyramid encode_labels(const LabelSet& labels, const LabelEncoderParams& params,
                             std::span<const ScaleShape> scale_shapes, int num_classes);

// The encoder applied to an already rendered pyramid.
FeaturePyramid apply_label_encoder(const FeaturePyramid& rendered, const LabelEncoderParams& params);

// Gradient of sum(upstream * apply_label_encoder(rendered, params)) w.r.t. params.
LabelEncoderParams label_encoder_backward(const FeaturePyramid& rendered, const LabelEncoderParams& params,
                                          const FeaturePyramid& upstream);

struct ScaleStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

struct PyramidStats {
  std::vector<ScaleStats> scales;
  std::size_t total_elements = 0;
};

PyramidStats pyramid_stats(const FeaturePyramid& k);

}  // namespace selfdistill
