#include "selfdistill/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/metrics.hpp"
#include "selfdistill/rng.hpp"

namespace selfdistill {
namespace {

enum class ShapeKind { rectangle, disc, triangle };

constexpr double kBackgroundNoise = 0.15;
constexpr int kPlacementAttempts = 64;

double class_intensity(int cls, int num_classes) { return 0.35 + 0.65 * (cls + 1) / num_classes; }

bool inside(ShapeKind kind, double px, double py, double x0, double y0, double w, double h) {
  switch (kind) {
    case ShapeKind::rectangle:
      return true;
    case ShapeKind::disc: {
      const double dx = (px - (x0 + 0.5 * w)) / (0.5 * w);
      const double dy = (py - (y0 + 0.5 * h)) / (0.5 * h);
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::triangle: {
      // Apex at top centre, base along the bottom edge.
      const double half = 0.5 * w * (py - y0) / h;
      return std::abs(px - (x0 + 0.5 * w)) <= half;
    }
  }
  return false;
}

struct Footprint {
  std::size_t w;
  std::size_t h;
};

// Rejection-sample a footprint whose area falls in the wanted bucket.
bool draw_footprint(Rng& rng, const DatasetParams& params, SizeBucket bucket, Footprint& out) {
  const auto lo = static_cast<long long>(params.min_object_size);
  const auto hi = static_cast<long long>(params.max_object_size);
  for (int attempt = 0; attempt < 256; ++attempt) {
    const auto w = static_cast<std::size_t>(rng.integer(lo, hi));
    const auto h = static_cast<std::size_t>(rng.integer(lo, hi));
    if (2 * w < h || 2 * h < w) continue;
    if (size_bucket(static_cast<double>(w * h), params.image_size) == bucket) {
      out = {w, h};
      return true;
    }
  }
  return false;
}

bool overlaps(const Box& a, const Box& b) {
  // One pixel of clearance so painted shapes never touch.
  return a.x_min < b.x_max + 1 && b.x_min < a.x_max + 1 && a.y_min < b.y_max + 1 && b.y_min < a.y_max + 1;
}

void expect(std::istream& in, const std::string& word, std::size_t scene) {
  std::string got;
  if (!(in >> got) || got != word) {
    throw IoError(fmt::format("dataset scene {}: expected '{}', found '{}'", scene, word, got));
  }
}

}  // namespace

void DatasetParams::validate() const {
  if (count == 0) throw InvalidConfig("dataset count must be positive");
  if (num_classes < 1) throw InvalidConfig("dataset needs at least one class");
  if (image_size.width == 0 || image_size.height == 0) throw InvalidConfig("dataset image size must be positive");
  if (min_objects > max_objects) throw InvalidConfig("dataset min_objects exceeds max_objects");
  if (min_object_size < 1 || min_object_size > max_object_size) {
    throw InvalidConfig(fmt::format("dataset object sizes [{}, {}] are invalid", min_object_size, max_object_size));
  }
  if (max_object_size > std::min(image_size.width, image_size.height)) {
    throw InvalidConfig(fmt::format("object size {} does not fit a {}x{} image", max_object_size, image_size.width,
                                    image_size.height));
  }
}

std::vector<SyntheticScene> generate_dataset(std::uint64_t seed, const DatasetParams& params) {
  params.validate();
  Rng rng(seed);
  const std::size_t W = params.image_size.width;
  const std::size_t H = params.image_size.height;
  constexpr SizeBucket kBuckets[] = {SizeBucket::small, SizeBucket::medium, SizeBucket::large};

  std::vector<SyntheticScene> scenes;
  scenes.reserve(params.count);
  for (std::size_t s = 0; s < params.count; ++s) {
    SyntheticScene scene;
    scene.size = params.image_size;
    scene.labels.image_size = params.image_size;
    scene.pixels.resize(W * H);
    for (double& v : scene.pixels) v = kBackgroundNoise * rng.uniform();

    const auto objects =
        static_cast<std::size_t>(rng.integer(static_cast<long long>(params.min_objects),
                                             static_cast<long long>(params.max_objects)));
    std::vector<Box> placed;
    for (std::size_t o = 0; o < objects; ++o) {
      const int cls = static_cast<int>(rng.index(static_cast<std::size_t>(params.num_classes)));
      Footprint fp{};
      if (!draw_footprint(rng, params, kBuckets[rng.index(3)], fp)) continue;

      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const auto x0 = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(W - fp.w)));
        const auto y0 = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(H - fp.h)));
        const Box frame{double(x0), double(y0), double(x0 + fp.w), double(y0 + fp.h)};
        if (std::any_of(placed.begin(), placed.end(), [&](const Box& b) { return overlaps(frame, b); })) continue;

        const auto kind = static_cast<ShapeKind>(cls % 3);
        const double intensity = class_intensity(cls, params.num_classes);
        std::size_t c_lo = W, c_hi = 0, r_lo = H, r_hi = 0;
        for (std::size_t r = y0; r < y0 + fp.h; ++r) {
          for (std::size_t c = x0; c < x0 + fp.w; ++c) {
            if (!inside(kind, c + 0.5, r + 0.5, double(x0), double(y0), double(fp.w), double(fp.h))) continue;
            scene.pixels[r * W + c] = intensity;
            c_lo = std::min(c_lo, c);
            c_hi = std::max(c_hi, c);
            r_lo = std::min(r_lo, r);
            r_hi = std::max(r_hi, r);
          }
        }
        if (c_lo > c_hi) {
          // Nothing painted: fall back to the centre pixel.
          c_lo = c_hi = x0 + fp.w / 2;
          r_lo = r_hi = y0 + fp.h / 2;
          scene.pixels[r_lo * W + c_lo] = intensity;
        }
        scene.labels.boxes.push_back({double(c_lo), double(r_lo), double(c_hi + 1), double(r_hi + 1)});
        scene.labels.classes.push_back(cls);
        placed.push_back(frame);
        break;
      }
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

BucketCensus bucket_census(std::span<const SyntheticScene> scenes) {
  BucketCensus census;
  for (const auto& scene : scenes) {
    for (const Box& b : scene.labels.boxes) {
      switch (size_bucket(b.area(), scene.size)) {
        case SizeBucket::small:
          ++census.small;
          break;
        case SizeBucket::medium:
          ++census.medium;
          break;
        default:
          ++census.large;
          break;
      }
    }
  }
  return census;
}

void write_dataset(std::ostream& out, std::span<const SyntheticScene> scenes) {
  out << "selfdistill-dataset 1\n";
  for (const auto& scene : scenes) {
    out << fmt::format("scene {} {} {}\n", scene.size.width, scene.size.height, scene.labels.size());
    out << "pixels";
    for (double v : scene.pixels) out << ' ' << fmt::format("{}", v);
    out << '\n';
    for (std::size_t i = 0; i < scene.labels.size(); ++i) {
      const Box& b = scene.labels.boxes[i];
      out << fmt::format("object {} {} {} {} {}\n", scene.labels.classes[i], b.x_min, b.y_min, b.x_max, b.y_max);
    }
  }
}

std::vector<SyntheticScene> read_dataset(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "selfdistill-dataset" || version != 1) {
    throw IoError("not a selfdistill-dataset version 1 stream");
  }
  std::vector<SyntheticScene> scenes;
  std::string word;
  while (in >> word) {
    const std::size_t index = scenes.size();
    if (word != "scene") throw IoError(fmt::format("dataset scene {}: expected 'scene', found '{}'", index, word));
    SyntheticScene scene;
    std::size_t objects = 0;
    if (!(in >> scene.size.width >> scene.size.height >> objects) || scene.size.width == 0 ||
        scene.size.height == 0) {
      throw IoError(fmt::format("dataset scene {}: bad header", index));
    }
    scene.labels.image_size = scene.size;
    expect(in, "pixels", index);
    scene.pixels.resize(scene.size.width * scene.size.height);
    for (double& v : scene.pixels) {
      if (!(in >> v)) throw IoError(fmt::format("dataset scene {}: truncated pixel row", index));
    }
    for (std::size_t o = 0; o < objects; ++o) {
      expect(in, "object", index);
      int cls = 0;
      Box b;
      if (!(in >> cls >> b.x_min >> b.y_min >> b.x_max >> b.y_max)) {
        throw IoError(fmt::format("dataset scene {}: bad object line", index));
      }
      scene.labels.boxes.push_back(b);
      scene.labels.classes.push_back(cls);
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void save_dataset(const std::string& path, std::span<const SyntheticScene> scenes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  write_dataset(out, scenes);
  if (!out) throw IoError("failed writing dataset file '" + path + "'");
}

std::vector<SyntheticScene> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset file '" + path + "'");
  return read_dataset(in);
}

}  // namespace selfdistill
