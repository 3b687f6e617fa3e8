#pragma once

// The toy student: a per-scale convolutional feature extractor producing a
// single-channel feature pyramid from a grayscale image, and the detection
// head shared by the student pyramid and the label-enhanced pyramid.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selfdistill/metrics.hpp"
#include "selfdistill/parameters.hpp"
#include "selfdistill/pyramid.hpp"
#include "selfdistill/tensor.hpp"

namespace selfdistill {

struct ModelShape {
  std::vector<ScaleShape> scales{{8, 8}, {4, 4}, {2, 2}};
  ImageSize image{64, 64};
  int num_classes = 3;
  std::size_t backbone_channels = 4;
  std::size_t head_hidden = 8;

  // Throws InvalidConfig: image dimensions must be divisible by every scale.
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

class StudentModel {
 public:
  // Random initialization from seed.
  StudentModel(ModelShape shape, std::uint64_t seed);
  // Throws ShapeError unless params has the layout of layout(shape).
  StudentModel(ModelShape shape, ParameterSet params);

  // Zero-filled parameter layout: per scale p, blocks backbone.s<p>.conv_w
  // [channels,3,3], conv_b [channels], proj_w [channels], proj_b [1].
  static ParameterSet layout(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  struct Activations {
    // [scale][tap] zero-padded shifted copies of the pooled input.
    std::vector<std::array<Map2D, 9>> taps;
    // [scale][channel] post-tanh hidden maps.
    std::vector<std::vector<Map2D>> hidden;
  };

  FeaturePyramid forward(std::span<const double> image, Activations* activations = nullptr) const;
  // Accumulates d loss / d params into grad.
  void backward(const Activations& activations, const FeaturePyramid& grad_output, ParameterSet& grad) const;

 private:
  ModelShape shape_;
  ParameterSet params_;
};

// Regression targets are box edge distances from the cell centre in units
// of kRegressionCells cell widths (heights).
inline constexpr double kRegressionCells = 4.0;

class DetectionHead {
 public:
  DetectionHead(int num_classes, std::size_t hidden, std::uint64_t seed);
  DetectionHead(int num_classes, std::size_t hidden, ParameterSet params);

  // head.w1 [hidden, 9], head.b1 [hidden], head.w2 [C+5, hidden], head.b2 [C+5].
  static ParameterSet layout(int num_classes, std::size_t hidden);

  int num_classes() const { return num_classes_; }
  std::size_t hidden() const { return hidden_; }
  // C+1 class logits (index 0 is background) followed by 4 box offsets.
  std::size_t outputs() const { return static_cast<std::size_t>(num_classes_) + 5; }

  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  struct Cache {
    std::vector<ScaleShape> shapes;
    // Per scale, row-major per cell: 3x3 neighbourhood inputs, hidden
    // activations and raw outputs.
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> hidden;
    std::vector<std::vector<double>> outputs;
  };

  Cache forward(const FeaturePyramid& k) const;
  // grad_outputs mirrors Cache::outputs. Accumulates into grad; writes the
  // input gradient when grad_input is non-null.
  void backward(const Cache& cache, const std::vector<std::vector<double>>& grad_outputs, ParameterSet& grad,
                FeaturePyramid* grad_input) const;

 private:
  int num_classes_;
  std::size_t hidden_;
  ParameterSet params_;
};

struct CellTarget {
  // 0 is background, c + 1 is class c.
  int label = 0;
  std::array<double, 4> offsets{};
};

// A cell is positive iff its centre lies in a box (x_min <= cx < x_max and
// likewise in y); the smallest such box wins.
std::vector<std::vector<CellTarget>> assign_targets(const LabelSet& labels, std::span<const ScaleShape> shapes);

struct DetectionLossValue {
  double value = 0.0;
  // Mean over all cells of the base-2 cross-entropy over C+1 classes.
  double classification = 0.0;
  // Sum over positive cells of the squared offset error, over max(1, positives).
  double regression = 0.0;
  std::size_t positives = 0;
  std::optional<ParameterSet> head_gradient;
  std::optional<FeaturePyramid> input_gradient;
};

DetectionLossValue detection_loss(const DetectionHead& head, const FeaturePyramid& k, const LabelSet& labels,
                                  bool with_gradients = false);

struct DecodeOptions {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::size_t max_detections = 100;
  bool operator==(const DecodeOptions&) const = default;
};

// Greedy per-class suppression of boxes overlapping a higher-scored box by
// more than iou_threshold; keeps at most max_detections.
std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold,
                                           std::size_t max_detections);

std::vector<Detection> decode_detections(const DetectionHead& head, const FeaturePyramid& k, ImageSize image,
                                         std::size_t image_id, const DecodeOptions& options = {});

}  // namespace selfdistill
