#include "selfdistill/pyramid.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"

namespace selfdistill {
namespace {

// Zero-padded 3x3 correlation.
Map2D mix3x3(const Map2D& in, const std::array<double, 9>& w) {
  Map2D out(in.rows(), in.cols());
  const auto rows = static_cast<std::ptrdiff_t>(in.rows());
  const auto cols = static_cast<std::ptrdiff_t>(in.cols());
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        const std::ptrdiff_t rr = r + dr;
        if (rr < 0 || rr >= rows) continue;
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const std::ptrdiff_t cc = c + dc;
          if (cc < 0 || cc >= cols) continue;
          acc += w[static_cast<std::size_t>((dr + 1) * 3 + (dc + 1))] *
                 in(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        }
      }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  return out;
}

void require_matching_encoder(const FeaturePyramid& rendered, const LabelEncoderParams& params) {
  params.validate();
  if (params.scale_count() != rendered.scale_count()) {
    throw ShapeError(fmt::format("label encoder has {} scales, pyramid has {}", params.scale_count(),
                                 rendered.scale_count()));
  }
}

}  // namespace

bool Box::well_formed() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) && std::isfinite(y_max) &&
         x_min < x_max && y_min < y_max;
}

void LabelSet::validate(int num_classes) const {
  if (boxes.size() != classes.size()) {
    throw InvalidInput(fmt::format("label set has {} boxes but {} classes", boxes.size(), classes.size()));
  }
  const auto w = static_cast<double>(image_size.width);
  const auto h = static_cast<double>(image_size.height);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    if (!b.well_formed()) throw InvalidInput(fmt::format("label box {} is degenerate", i));
    if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h) {
      throw InvalidInput(fmt::format("label box {} lies outside the {}x{} image", i, image_size.width,
                                     image_size.height));
    }
    if (classes[i] < 0 || classes[i] >= num_classes) {
      throw InvalidInput(fmt::format("label {} has class {} outside [0, {})", i, classes[i], num_classes));
    }
  }
}

FeaturePyramid render_labels(const LabelSet& labels, std::span<const ScaleShape> scale_shapes, int num_classes) {
  if (scale_shapes.empty()) throw InvalidConfig("render_labels needs at least one scale");
  if (num_classes < 1) throw InvalidConfig("render_labels needs at least one class");
  if (labels.image_size.width == 0 || labels.image_size.height == 0) throw InvalidInput("label image size is empty");
  labels.validate(num_classes);

  FeaturePyramid out = FeaturePyramid::zeros(scale_shapes);
  const auto w = static_cast<double>(labels.image_size.width);
  const auto h = static_cast<double>(labels.image_size.height);
  for (std::size_t p = 0; p < scale_shapes.size(); ++p) {
    Map2D& map = out.scale(p);
    const auto rows = static_cast<double>(map.rows());
    const auto cols = static_cast<double>(map.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Box& b = labels.boxes[i];
      const double intensity = static_cast<double>(labels.classes[i] + 1) / num_classes;
      const auto c0 = static_cast<std::size_t>(std::floor(b.x_min * cols / w));
      const auto c1 = std::min(map.cols(), static_cast<std::size_t>(std::ceil(b.x_max * cols / w)));
      const auto r0 = static_cast<std::size_t>(std::floor(b.y_min * rows / h));
      const auto r1 = std::min(map.rows(), static_cast<std::size_t>(std::ceil(b.y_max * rows / h)));
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) map(r, c) = std::max(map(r, c), intensity);
      }
    }
  }
  return out;
}

LabelEncoderParams LabelEncoderParams::identity(std::size_t scale_count) {
  LabelEncoderParams p;
  p.gain.assign(scale_count, 1.0);
  p.bias.assign(scale_count, 0.0);
  p.mixing.fill(0.0);
  p.mixing[4] = 1.0;
  return p;
}

void LabelEncoderParams::validate() const {
  if (gain.empty() || gain.size() != bias.size()) {
    throw InvalidConfig(fmt::format("label encoder has {} gains and {} biases", gain.size(), bias.size()));
  }
  if (parameter_count() >= 1000) throw InvalidConfig("label encoder must have fewer than 1000 parameters");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(gain.begin(), gain.end(), finite) || !std::all_of(bias.begin(), bias.end(), finite) ||
      !std::all_of(mixing.begin(), mixing.end(), finite)) {
    throw InvalidConfig("label encoder parameters must be finite");
  }
}

FeaturePyramid encode_labels(const LabelSet& labels, const LabelEncoderParams& params,
                             std::span<const ScaleShape> scale_shapes, int num_classes) {
  return apply_label_encoder(render_labels(labels, scale_shapes, num_classes), params);
}

FeaturePyramid apply_label_encoder(const FeaturePyramid& rendered, const LabelEncoderParams& params) {
  require_matching_encoder(rendered, params);
  std::vector<Map2D> scales;
  scales.reserve(rendered.scale_count());
  for (std::size_t p = 0; p < rendered.scale_count(); ++p) {
    Map2D m = mix3x3(rendered.scale(p), params.mixing);
    for (double& v : m.values()) v = params.gain[p] * v + params.bias[p];
    scales.push_back(std::move(m));
  }
  return FeaturePyramid(std::move(scales));
}

LabelEncoderParams label_encoder_backward(const FeaturePyramid& rendered, const LabelEncoderParams& params,
                                          const FeaturePyramid& upstream) {
  require_matching_encoder(rendered, params);
  require_same_shape(rendered, upstream);

  LabelEncoderParams grad;
  grad.gain.assign(params.scale_count(), 0.0);
  grad.bias.assign(params.scale_count(), 0.0);
  grad.mixing.fill(0.0);
  for (std::size_t p = 0; p < rendered.scale_count(); ++p) {
    const Map2D& r = rendered.scale(p);
    const Map2D& up = upstream.scale(p);
    const Map2D mixed = mix3x3(r, params.mixing);
    grad.gain[p] = kernels::dot(up.values(), mixed.values());
    grad.bias[p] = kernels::sum(up.values());

    const auto rows = static_cast<std::ptrdiff_t>(r.rows());
    const auto cols = static_cast<std::ptrdiff_t>(r.cols());
    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
      for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
        double acc = 0.0;
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
          const std::ptrdiff_t ii = i + dr;
          if (ii < 0 || ii >= rows) continue;
          for (std::ptrdiff_t j = 0; j < cols; ++j) {
            const std::ptrdiff_t jj = j + dc;
            if (jj < 0 || jj >= cols) continue;
            acc += up(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
                   r(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
          }
        }
        grad.mixing[static_cast<std::size_t>((dr + 1) * 3 + (dc + 1))] += params.gain[p] * acc;
      }
    }
  }
  return grad;
}

PyramidStats pyramid_stats(const FeaturePyramid& k) {
  k.validate();
  PyramidStats stats;
  for (const Map2D& m : k.scales()) {
    const auto v = m.values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double total = 0.0;
    for (double x : v) total += x;
    stats.scales.push_back({*lo, *hi, total / static_cast<double>(v.size()), v.size()});
    stats.total_elements += v.size();
  }
  return stats;
}

}  // namespace selfdistill
