#include "selfdistill/metrics.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"

namespace selfdistill {
namespace {

constexpr int kRecallPoints = 101;

struct Outcome {
  double score;
  std::size_t image_id;
  std::size_t index;
  bool true_positive;
};

void check_inputs(std::span<const Detection> dets, std::span<const LabelSet> gts) {
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (!d.box.well_formed()) throw InvalidBox(fmt::format("detection {} has a degenerate box", i));
    if (!std::isfinite(d.score)) throw InvalidInput(fmt::format("detection {} has a non-finite score", i));
    if (d.image_id >= gts.size()) {
      throw InvalidInput(fmt::format("detection {} refers to image {} but only {} images exist", i, d.image_id,
                                     gts.size()));
    }
  }
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].boxes.size() != gts[i].classes.size()) {
      throw InvalidInput(fmt::format("ground truth of image {} has mismatched boxes and classes", i));
    }
    for (const Box& b : gts[i].boxes) {
      if (!b.well_formed()) throw InvalidBox(fmt::format("ground truth of image {} has a degenerate box", i));
    }
  }
}

double interpolated_ap(std::vector<Outcome>& outcomes, std::size_t positives) {
  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  std::vector<double> recall(outcomes.size());
  std::vector<double> precision(outcomes.size());
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    (outcomes[i].true_positive ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(positives);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double total = 0.0;
  for (int k = 0; k < kRecallPoints; ++k) {
    const double threshold = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), threshold);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / kRecallPoints;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  if (!a.well_formed() || !b.well_formed()) throw InvalidBox("iou needs boxes with positive area");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

SizeBucket size_bucket(double area, ImageSize image) {
  const double rescale = image.area() / (640.0 * 640.0);
  if (area < 32.0 * 32.0 * rescale) return SizeBucket::small;
  if (area <= 96.0 * 96.0 * rescale) return SizeBucket::medium;
  return SizeBucket::large;
}

bool in_bucket(double area, ImageSize image, SizeBucket bucket) {
  return bucket == SizeBucket::all || size_bucket(area, image) == bucket;
}

std::optional<double> average_precision(std::span<const Detection> dets, std::span<const LabelSet> gts,
                                        double iou_threshold, SizeBucket bucket) {
  check_inputs(dets, gts);

  // Detection indices grouped by (image, class), then score-ordered.
  std::map<std::pair<std::size_t, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dets.size(); ++i) groups[{dets[i].image_id, dets[i].class_id}].push_back(i);

  std::map<int, std::size_t> positives;
  for (const LabelSet& gt : gts) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (in_bucket(gt.boxes[g].area(), gt.image_size, bucket)) ++positives[gt.classes[g]];
    }
  }
  if (positives.empty()) return std::nullopt;

  std::map<int, std::vector<Outcome>> per_class;
  for (auto& [key, indices] : groups) {
    const auto [image_id, cls] = key;
    if (!positives.contains(cls)) continue;
    const LabelSet& gt = gts[image_id];
    std::stable_sort(indices.begin(), indices.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<bool> taken(gt.size(), false);
    for (std::size_t di : indices) {
      const Detection& d = dets[di];
      // Prefer ground truth inside the bucket; a match outside it is ignored.
      std::optional<std::size_t> best_in;
      std::optional<std::size_t> best_out;
      double iou_in = -1.0;
      double iou_out = -1.0;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if (taken[g] || gt.classes[g] != cls) continue;
        const double o = iou(d.box, gt.boxes[g]);
        if (o < iou_threshold) continue;
        if (in_bucket(gt.boxes[g].area(), gt.image_size, bucket)) {
          if (o > iou_in) {
            iou_in = o;
            best_in = g;
          }
        } else if (o > iou_out) {
          iou_out = o;
          best_out = g;
        }
      }
      if (best_in) {
        taken[*best_in] = true;
        per_class[cls].push_back({d.score, image_id, di, true});
      } else if (best_out) {
        taken[*best_out] = true;
      } else if (in_bucket(d.box.area(), gt.image_size, bucket)) {
        per_class[cls].push_back({d.score, image_id, di, false});
      }
    }
  }

  double total = 0.0;
  for (const auto& [cls, count] : positives) total += interpolated_ap(per_class[cls], count);
  return total / static_cast<double>(positives.size());
}

ApReport ap_report(std::span<const Detection> dets, std::span<const LabelSet> gts) {
  auto coco_mean = [&](SizeBucket bucket) -> std::optional<double> {
    double total = 0.0;
    for (int t = 0; t < 10; ++t) {
      const auto ap = average_precision(dets, gts, (10.0 + t) / 20.0, bucket);
      if (!ap) return std::nullopt;
      total += *ap;
    }
    return total / 10.0;
  };
  ApReport report;
  report.ap = coco_mean(SizeBucket::all);
  report.ap50 = average_precision(dets, gts, 0.5);
  report.ap75 = average_precision(dets, gts, 0.75);
  report.aps = coco_mean(SizeBucket::small);
  report.apm = coco_mean(SizeBucket::medium);
  report.apl = coco_mean(SizeBucket::large);
  return report;
}

std::string ap_report_csv_header() { return "ap,ap50,ap75,aps,apm,apl"; }

std::string ap_report_csv_row(const ApReport& report) {
  auto field = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string("undefined"); };
  return fmt::format("{},{},{},{},{},{}", field(report.ap), field(report.ap50), field(report.ap75), field(report.aps),
                     field(report.apm), field(report.apl));
}

}  // namespace selfdistill
