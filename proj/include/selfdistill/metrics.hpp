#pragma once

// IoU and the COCO-style average precision family.
//
// Matching: per image and class, detections in descending score order take
// the unmatched ground truth of highest IoU at or above the threshold.
// Precision is made monotone from the right and sampled at the 101 recall
// points 0, 0.01, ..., 1. Per-class APs are averaged over classes that have
// ground truth in the size bucket.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfdistill/pyramid.hpp"

namespace selfdistill {

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
  std::size_t image_id = 0;

  bool operator==(const Detection&) const = default;
};

enum class SizeBucket { all, small, medium, large };

// Throws InvalidBox if either box has zero or negative area.
double iou(const Box& a, const Box& b);

// Area thresholds 32^2 and 96^2 rescaled by image_area / 640^2.
// small: area < t_s; medium: t_s <= area <= t_m; large: area > t_m.
SizeBucket size_bucket(double area, ImageSize image);
bool in_bucket(double area, ImageSize image, SizeBucket bucket);

// gts[i] holds the ground truth of image i; detection image ids index gts.
// nullopt when the bucket has no ground truth.
std::optional<double> average_precision(std::span<const Detection> dets, std::span<const LabelSet> gts,
                                        double iou_threshold, SizeBucket bucket = SizeBucket::all);

struct ApReport {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::optional<double> aps;
  std::optional<double> apm;
  std::optional<double> apl;

  bool operator==(const ApReport&) const = default;
};

// AP, APs, APm and APl average IoU thresholds 0.50:0.05:0.95.
ApReport ap_report(std::span<const Detection> dets, std::span<const LabelSet> gts);

// "ap,ap50,ap75,aps,apm,apl"
std::string ap_report_csv_header();
// Undefined values are written as "undefined".
std::string ap_report_csv_row(const ApReport& report);

}  // namespace selfdistill
