#pragma once

// Synthetic detection scenes: grayscale images holding non-overlapping
// rectangles, discs and triangles whose class fixes both shape and intensity.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "selfdistill/pyramid.hpp"

namespace selfdistill {

struct SyntheticScene {
  ImageSize size;
  // Row-major, values in [0, 1].
  std::vector<double> pixels;
  LabelSet labels;

  double pixel(std::size_t row, std::size_t col) const { return pixels[row * size.width + col]; }
  bool operator==(const SyntheticScene&) const = default;
};

struct DatasetParams {
  std::size_t count = 64;
  ImageSize image_size{64, 64};
  int num_classes = 3;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  // Side lengths in pixels.
  std::size_t min_object_size = 2;
  std::size_t max_object_size = 32;

  // Throws InvalidConfig.
  void validate() const;
};

// Deterministic in (seed, params). Each object first draws a size bucket
// uniformly, then a footprint in that bucket. Boxes are the exact pixel
// bounding boxes of what was painted.
std::vector<SyntheticScene> generate_dataset(std::uint64_t seed, const DatasetParams& params);

struct BucketCensus {
  std::size_t small = 0;
  std::size_t medium = 0;
  std::size_t large = 0;

  bool operator==(const BucketCensus&) const = default;
};

BucketCensus bucket_census(std::span<const SyntheticScene> scenes);

// Line-oriented text format, see docs/formats.md:
//   selfdistill-dataset 1
//   scene <width> <height> <object count>
//   pixels <width*height values>
//   object <class> <x_min> <y_min> <x_max> <y_max>     (object count lines)
void write_dataset(std::ostream& out, std::span<const SyntheticScene> scenes);
std::vector<SyntheticScene> read_dataset(std::istream& in);
void save_dataset(const std::string& path, std::span<const SyntheticScene> scenes);
std::vector<SyntheticScene> load_dataset(const std::string& path);

}  // namespace selfdistill
