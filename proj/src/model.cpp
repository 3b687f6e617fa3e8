#include "selfdistill/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"
#include "selfdistill/rng.hpp"

namespace selfdistill {
namespace {

constexpr std::size_t kTaps = 9;
constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

std::string block_name(std::size_t scale, const char* what) { return fmt::format("backbone.s{}.{}", scale, what); }

// Zero-padded shifted copy: out(i, j) = in(i + dr, j + dc).
Map2D shifted(const Map2D& in, int dr, int dc) {
  Map2D out(in.rows(), in.cols());
  const auto rows = static_cast<long>(in.rows());
  const auto cols = static_cast<long>(in.cols());
  for (long i = 0; i < rows; ++i) {
    const long r = i + dr;
    if (r < 0 || r >= rows) continue;
    for (long j = 0; j < cols; ++j) {
      const long c = j + dc;
      if (c < 0 || c >= cols) continue;
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = in(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
  }
  return out;
}

Map2D average_pool(std::span<const double> image, ImageSize size, ScaleShape shape) {
  const std::size_t fy = size.height / shape.rows;
  const std::size_t fx = size.width / shape.cols;
  const double inv = 1.0 / static_cast<double>(fx * fy);
  Map2D out(shape.rows, shape.cols);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) {
      double acc = 0.0;
      for (std::size_t y = r * fy; y < (r + 1) * fy; ++y) {
        for (std::size_t x = c * fx; x < (c + 1) * fx; ++x) acc += image[y * size.width + x];
      }
      out(r, c) = acc * inv;
    }
  }
  return out;
}

void fill_normal(Rng& rng, std::span<double> values, double stddev) {
  for (double& v : values) v = stddev * rng.normal();
}

}  // namespace

void ModelShape::validate() const {
  if (scales.empty()) throw InvalidConfig("model needs at least one scale");
  if (num_classes < 1) throw InvalidConfig("model needs at least one class");
  if (image.width == 0 || image.height == 0) throw InvalidConfig("image size must be positive");
  if (backbone_channels == 0 || head_hidden == 0) throw InvalidConfig("model widths must be positive");
  for (const auto& s : scales) {
    if (s.rows == 0 || s.cols == 0 || image.height % s.rows != 0 || image.width % s.cols != 0) {
      throw InvalidConfig(fmt::format("scale {} does not evenly divide the {}x{} image", to_string(s), image.width,
                                      image.height));
    }
  }
}

// --- StudentModel -----------------------------------------------------------

ParameterSet StudentModel::layout(const ModelShape& shape) {
  ParameterSet params;
  const std::size_t ch = shape.backbone_channels;
  for (std::size_t p = 0; p < shape.scales.size(); ++p) {
    params.add(block_name(p, "conv_w"), {ch, 3, 3});
    params.add(block_name(p, "conv_b"), {ch});
    params.add(block_name(p, "proj_w"), {ch});
    params.add(block_name(p, "proj_b"), {1});
  }
  return params;
}

StudentModel::StudentModel(ModelShape shape, std::uint64_t seed) : shape_(std::move(shape)) {
  shape_.validate();
  params_ = layout(shape_);
  Rng rng(seed);
  for (std::size_t p = 0; p < shape_.scales.size(); ++p) {
    fill_normal(rng, params_.values(4 * p), 1.0 / 3.0);
    fill_normal(rng, params_.values(4 * p + 2), 1.0 / std::sqrt(static_cast<double>(shape_.backbone_channels)));
  }
}

StudentModel::StudentModel(ModelShape shape, ParameterSet params) : shape_(std::move(shape)), params_(std::move(params)) {
  shape_.validate();
  if (!params_.same_layout(layout(shape_))) throw ShapeError("backbone parameters do not match the model shape");
}

FeaturePyramid StudentModel::forward(std::span<const double> image, Activations* activations) const {
  if (image.size() != shape_.image.width * shape_.image.height) {
    throw ShapeError(fmt::format("image has {} pixels, model expects {}x{}", image.size(), shape_.image.width,
                                 shape_.image.height));
  }
  const std::size_t ch = shape_.backbone_channels;
  std::vector<Map2D> out;
  if (activations != nullptr) {
    activations->taps.assign(shape_.scales.size(), {});
    activations->hidden.assign(shape_.scales.size(), {});
  }
  for (std::size_t p = 0; p < shape_.scales.size(); ++p) {
    const ScaleShape s = shape_.scales[p];
    const Map2D pooled = average_pool(image, shape_.image, s);
    std::array<Map2D, kTaps> taps;
    for (std::size_t t = 0; t < kTaps; ++t) taps[t] = shifted(pooled, static_cast<int>(t / 3) - 1, static_cast<int>(t % 3) - 1);

    const auto conv_w = params_.values(4 * p);
    const auto conv_b = params_.values(4 * p + 1);
    const auto proj_w = params_.values(4 * p + 2);
    const double proj_b = params_.values(4 * p + 3)[0];

    Map2D result(s.rows, s.cols, proj_b);
    std::vector<Map2D> hidden;
    hidden.reserve(ch);
    for (std::size_t c = 0; c < ch; ++c) {
      Map2D h(s.rows, s.cols, conv_b[c]);
      for (std::size_t t = 0; t < kTaps; ++t) kernels::axpy(conv_w[c * kTaps + t], taps[t].values(), h.values());
      for (double& v : h.values()) v = std::tanh(v);
      kernels::axpy(proj_w[c], h.values(), result.values());
      hidden.push_back(std::move(h));
    }
    out.push_back(std::move(result));
    if (activations != nullptr) {
      activations->taps[p] = std::move(taps);
      activations->hidden[p] = std::move(hidden);
    }
  }
  return FeaturePyramid(std::move(out));
}

void StudentModel::backward(const Activations& activations, const FeaturePyramid& grad_output, ParameterSet& grad) const {
  if (!grad.same_layout(params_)) throw ShapeError("backbone gradient layout mismatch");
  const std::size_t ch = shape_.backbone_channels;
  for (std::size_t p = 0; p < shape_.scales.size(); ++p) {
    const auto g = grad_output.scale(p).values();
    const auto proj_w = params_.values(4 * p + 2);
    auto d_conv_w = grad.values(4 * p);
    auto d_conv_b = grad.values(4 * p + 1);
    auto d_proj_w = grad.values(4 * p + 2);
    grad.values(4 * p + 3)[0] += kernels::sum(g);

    std::vector<double> dpre(g.size());
    for (std::size_t c = 0; c < ch; ++c) {
      const auto h = activations.hidden[p][c].values();
      d_proj_w[c] += kernels::dot(g, h);
      for (std::size_t i = 0; i < g.size(); ++i) dpre[i] = g[i] * proj_w[c] * (1.0 - h[i] * h[i]);
      d_conv_b[c] += kernels::sum(dpre);
      for (std::size_t t = 0; t < kTaps; ++t) d_conv_w[c * kTaps + t] += kernels::dot(dpre, activations.taps[p][t].values());
    }
  }
}

// --- DetectionHead ----------------------------------------------------------

ParameterSet DetectionHead::layout(int num_classes, std::size_t hidden) {
  const auto outputs = static_cast<std::size_t>(num_classes) + 5;
  ParameterSet params;
  params.add("head.w1", {hidden, kTaps});
  params.add("head.b1", {hidden});
  params.add("head.w2", {outputs, hidden});
  params.add("head.b2", {outputs});
  return params;
}

DetectionHead::DetectionHead(int num_classes, std::size_t hidden, std::uint64_t seed)
    : num_classes_(num_classes), hidden_(hidden) {
  if (num_classes < 1 || hidden == 0) throw InvalidConfig("detection head needs classes and hidden units");
  params_ = layout(num_classes, hidden);
  Rng rng(seed);
  fill_normal(rng, params_.values(0), 1.0 / 3.0);
  fill_normal(rng, params_.values(2), 1.0 / std::sqrt(static_cast<double>(hidden)));
}

DetectionHead::DetectionHead(int num_classes, std::size_t hidden, ParameterSet params)
    : num_classes_(num_classes), hidden_(hidden), params_(std::move(params)) {
  if (num_classes < 1 || hidden == 0) throw InvalidConfig("detection head needs classes and hidden units");
  if (!params_.same_layout(layout(num_classes, hidden))) throw ShapeError("head parameters do not match its shape");
}

DetectionHead::Cache DetectionHead::forward(const FeaturePyramid& k) const {
  Cache cache;
  cache.shapes = k.shapes();
  const std::size_t out_n = outputs();
  const auto w1 = params_.values(0);
  const auto b1 = params_.values(1);
  const auto w2 = params_.values(2);
  const auto b2 = params_.values(3);

  for (const Map2D& map : k.scales()) {
    const std::size_t cells = map.size();
    std::vector<double> inputs(cells * kTaps, 0.0);
    std::vector<double> hidden(cells * hidden_);
    std::vector<double> out(cells * out_n);
    const auto rows = static_cast<long>(map.rows());
    const auto cols = static_cast<long>(map.cols());
    for (long i = 0; i < rows; ++i) {
      for (long j = 0; j < cols; ++j) {
        const auto cell = static_cast<std::size_t>(i * cols + j);
        double* x = &inputs[cell * kTaps];
        for (std::size_t t = 0; t < kTaps; ++t) {
          const long r = i + static_cast<long>(t / 3) - 1;
          const long c = j + static_cast<long>(t % 3) - 1;
          if (r >= 0 && r < rows && c >= 0 && c < cols) x[t] = map(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        }
        double* h = &hidden[cell * hidden_];
        for (std::size_t u = 0; u < hidden_; ++u) {
          h[u] = std::tanh(b1[u] + kernels::dot(w1.subspan(u * kTaps, kTaps), {x, kTaps}));
        }
        double* o = &out[cell * out_n];
        for (std::size_t v = 0; v < out_n; ++v) o[v] = b2[v] + kernels::dot(w2.subspan(v * hidden_, hidden_), {h, hidden_});
      }
    }
    cache.inputs.push_back(std::move(inputs));
    cache.hidden.push_back(std::move(hidden));
    cache.outputs.push_back(std::move(out));
  }
  return cache;
}

void DetectionHead::backward(const Cache& cache, const std::vector<std::vector<double>>& grad_outputs, ParameterSet& grad,
                             FeaturePyramid* grad_input) const {
  if (!grad.same_layout(params_)) throw ShapeError("head gradient layout mismatch");
  const std::size_t out_n = outputs();
  const auto w1 = params_.values(0);
  const auto w2 = params_.values(2);
  auto d_w1 = grad.values(0);
  auto d_b1 = grad.values(1);
  auto d_w2 = grad.values(2);
  auto d_b2 = grad.values(3);
  if (grad_input != nullptr) *grad_input = FeaturePyramid::zeros(cache.shapes);

  std::vector<double> dh(hidden_);
  std::array<double, kTaps> dx{};
  for (std::size_t p = 0; p < cache.shapes.size(); ++p) {
    const auto rows = static_cast<long>(cache.shapes[p].rows);
    const auto cols = static_cast<long>(cache.shapes[p].cols);
    for (long i = 0; i < rows; ++i) {
      for (long j = 0; j < cols; ++j) {
        const auto cell = static_cast<std::size_t>(i * cols + j);
        const std::span<const double> go(&grad_outputs[p][cell * out_n], out_n);
        const std::span<const double> h(&cache.hidden[p][cell * hidden_], hidden_);
        const std::span<const double> x(&cache.inputs[p][cell * kTaps], kTaps);

        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t v = 0; v < out_n; ++v) {
          if (go[v] == 0.0) continue;
          d_b2[v] += go[v];
          kernels::axpy(go[v], h, d_w2.subspan(v * hidden_, hidden_));
          kernels::axpy(go[v], w2.subspan(v * hidden_, hidden_), dh);
        }
        dx.fill(0.0);
        for (std::size_t u = 0; u < hidden_; ++u) {
          const double dpre = dh[u] * (1.0 - h[u] * h[u]);
          if (dpre == 0.0) continue;
          d_b1[u] += dpre;
          kernels::axpy(dpre, x, d_w1.subspan(u * kTaps, kTaps));
          kernels::axpy(dpre, w1.subspan(u * kTaps, kTaps), dx);
        }
        if (grad_input == nullptr) continue;
        Map2D& gi = grad_input->scale(p);
        for (std::size_t t = 0; t < kTaps; ++t) {
          const long r = i + static_cast<long>(t / 3) - 1;
          const long c = j + static_cast<long>(t % 3) - 1;
          if (r >= 0 && r < rows && c >= 0 && c < cols) gi(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) += dx[t];
        }
      }
    }
  }
}

// --- Targets, loss, decoding ------------------------------------------------

std::vector<std::vector<CellTarget>> assign_targets(const LabelSet& labels, std::span<const ScaleShape> shapes) {
  const auto W = static_cast<double>(labels.image_size.width);
  const auto H = static_cast<double>(labels.image_size.height);
  std::vector<std::vector<CellTarget>> targets;
  for (const ScaleShape& s : shapes) {
    const double stride_x = W / static_cast<double>(s.cols);
    const double stride_y = H / static_cast<double>(s.rows);
    std::vector<CellTarget> scale_targets(s.size());
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const double cx = (static_cast<double>(c) + 0.5) * stride_x;
        const double cy = (static_cast<double>(r) + 0.5) * stride_y;
        double best_area = std::numeric_limits<double>::infinity();
        CellTarget& t = scale_targets[r * s.cols + c];
        for (std::size_t b = 0; b < labels.size(); ++b) {
          const Box& box = labels.boxes[b];
          if (cx < box.x_min || cx >= box.x_max || cy < box.y_min || cy >= box.y_max) continue;
          if (box.area() >= best_area) continue;
          best_area = box.area();
          t.label = labels.classes[b] + 1;
          t.offsets = {(cx - box.x_min) / (kRegressionCells * stride_x), (cy - box.y_min) / (kRegressionCells * stride_y),
                       (box.x_max - cx) / (kRegressionCells * stride_x), (box.y_max - cy) / (kRegressionCells * stride_y)};
        }
      }
    }
    targets.push_back(std::move(scale_targets));
  }
  return targets;
}

DetectionLossValue detection_loss(const DetectionHead& head, const FeaturePyramid& k, const LabelSet& labels,
                                  bool with_gradients) {
  k.validate();
  labels.validate(head.num_classes());
  const auto shapes = k.shapes();
  const auto targets = assign_targets(labels, shapes);
  const DetectionHead::Cache cache = head.forward(k);

  const std::size_t out_n = head.outputs();
  const auto classes = static_cast<std::size_t>(head.num_classes()) + 1;
  const std::size_t cells = k.total_elements();
  std::size_t positives = 0;
  for (const auto& st : targets) {
    for (const auto& t : st) positives += t.label > 0 ? 1 : 0;
  }
  const double cls_weight = 1.0 / static_cast<double>(cells);
  const double reg_weight = 1.0 / static_cast<double>(std::max<std::size_t>(1, positives));

  DetectionLossValue loss;
  loss.positives = positives;
  std::vector<std::vector<double>> grad_out;
  if (with_gradients) {
    for (const auto& o : cache.outputs) grad_out.emplace_back(o.size(), 0.0);
  }
  std::vector<double> prob(classes);
  for (std::size_t p = 0; p < shapes.size(); ++p) {
    for (std::size_t cell = 0; cell < shapes[p].size(); ++cell) {
      const double* o = &cache.outputs[p][cell * out_n];
      const CellTarget& t = targets[p][cell];
      const double top = kernels::max({o, classes});
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += (prob[c] = std::exp(o[c] - top));
      const double log_z = std::log(z) + top;
      loss.classification += (log_z - o[t.label]) * kInvLn2 * cls_weight;

      double* g = with_gradients ? &grad_out[p][cell * out_n] : nullptr;
      if (g != nullptr) {
        for (std::size_t c = 0; c < classes; ++c) {
          g[c] = (prob[c] / z - (static_cast<int>(c) == t.label ? 1.0 : 0.0)) * kInvLn2 * cls_weight;
        }
      }
      if (t.label == 0) continue;
      for (std::size_t e = 0; e < 4; ++e) {
        const double d = o[classes + e] - t.offsets[e];
        loss.regression += d * d * reg_weight;
        if (g != nullptr) g[classes + e] = 2.0 * d * reg_weight;
      }
    }
  }
  loss.value = loss.classification + loss.regression;
  if (with_gradients) {
    loss.head_gradient = head.parameters().zeros_like();
    loss.input_gradient.emplace();
    head.backward(cache, grad_out, *loss.head_gradient, &*loss.input_gradient);
  }
  return loss;
}

std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold,
                                           std::size_t max_detections) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (kept.size() >= max_detections) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.image_id == d.image_id && k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_detections(const DetectionHead& head, const FeaturePyramid& k, ImageSize image,
                                         std::size_t image_id, const DecodeOptions& options) {
  const DetectionHead::Cache cache = head.forward(k);
  const std::size_t out_n = head.outputs();
  const auto classes = static_cast<std::size_t>(head.num_classes()) + 1;
  const auto W = static_cast<double>(image.width);
  const auto H = static_cast<double>(image.height);

  std::vector<Detection> candidates;
  std::vector<double> prob(classes);
  for (std::size_t p = 0; p < cache.shapes.size(); ++p) {
    const ScaleShape s = cache.shapes[p];
    const double stride_x = W / static_cast<double>(s.cols);
    const double stride_y = H / static_cast<double>(s.rows);
    for (std::size_t cell = 0; cell < s.size(); ++cell) {
      const double* o = &cache.outputs[p][cell * out_n];
      const double top = kernels::max({o, classes});
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += (prob[c] = std::exp(o[c] - top));
      std::size_t best = 1;
      for (std::size_t c = 2; c < classes; ++c) {
        if (prob[c] > prob[best]) best = c;
      }
      const double score = prob[best] / z;
      if (score < options.score_threshold) continue;

      const double cx = (static_cast<double>(cell % s.cols) + 0.5) * stride_x;
      const double cy = (static_cast<double>(cell / s.cols) + 0.5) * stride_y;
      // Half a pixel minimum extent keeps every decoded box well formed.
      auto extent = [](double v, double unit) { return std::max(v * kRegressionCells * unit, 0.5); };
      Box box{std::max(0.0, cx - extent(o[classes], stride_x)), std::max(0.0, cy - extent(o[classes + 1], stride_y)),
              std::min(W, cx + extent(o[classes + 2], stride_x)), std::min(H, cy + extent(o[classes + 3], stride_y))};
      candidates.push_back({box, static_cast<int>(best) - 1, score, image_id});
    }
  }
  return non_max_suppression(std::move(candidates), options.nms_iou, options.max_detections);
}

}  // namespace selfdistill
