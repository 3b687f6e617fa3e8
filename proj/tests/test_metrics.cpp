#include <gtest/gtest.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/metrics.hpp"
#include "selfdistill/rng.hpp"
#include "ap_oracle.hpp"

using namespace selfdistill;
using namespace testing_support;

namespace {

void expect_same(const std::optional<double>& a, const std::optional<double>& b) {
  ASSERT_EQ(a.has_value(), b.has_value());
  if (a) {
    EXPECT_NEAR(*a, *b, 1e-12);
  }
}

TEST(Iou, Fixtures) {
  const Box a{0, 0, 2, 2};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, Box{2, 0, 4, 2}), 0.0);
  EXPECT_NEAR(iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
  EXPECT_THROW(iou(a, Box{1, 1, 1, 3}), InvalidBox);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Box a = random_box(rng, 30);
    const Box b = random_box(rng, 30);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(iou(a, a), 1.0);
  }
}

TEST(SizeBuckets, ScaledThresholds) {
  const ImageSize img{64, 64};
  const double s = 64.0 * 64.0 / (640.0 * 640.0);
  EXPECT_EQ(size_bucket(1024 * s - 1e-9, img), SizeBucket::small);
  EXPECT_EQ(size_bucket(1024 * s, img), SizeBucket::medium);
  EXPECT_EQ(size_bucket(9216 * s, img), SizeBucket::medium);
  EXPECT_EQ(size_bucket(9216 * s + 1e-9, img), SizeBucket::large);
  EXPECT_EQ(size_bucket(1024.0, ImageSize{640, 640}), SizeBucket::medium);
}

TEST(AveragePrecision, PerfectDetector) {
  const std::vector<LabelSet> gts{{{{0, 0, 6, 6}, {20, 20, 50, 50}}, {0, 1}, {64, 64}},
                                  {{{3, 3, 5, 6}}, {1}, {64, 64}}};
  std::vector<Detection> dets;
  for (std::size_t im = 0; im < gts.size(); ++im) {
    for (std::size_t i = 0; i < gts[im].size(); ++i) dets.push_back({gts[im].boxes[i], gts[im].classes[i], 1.0, im});
  }
  const auto r = ap_report(dets, gts);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.ap50, 1.0);
  EXPECT_EQ(r.ap75, 1.0);
  EXPECT_EQ(r.aps, 1.0);
  EXPECT_EQ(r.apm, 1.0);
  EXPECT_EQ(r.apl, 1.0);
}

TEST(AveragePrecision, IouPointSixFixture) {
  const std::vector<LabelSet> gts{{{{0, 0, 10, 10}}, {0}, {64, 64}}};
  const std::vector<Detection> dets{{{0, 0, 10, 6}, 0, 0.9, 0}};
  ASSERT_NEAR(iou(dets[0].box, gts[0].boxes[0]), 0.6, 1e-15);
  EXPECT_EQ(average_precision(dets, gts, 0.5), 1.0);
  EXPECT_EQ(average_precision(dets, gts, 0.75), 0.0);
  const auto r = ap_report(dets, gts);
  EXPECT_EQ(r.ap50, 1.0);
  EXPECT_EQ(r.ap75, 0.0);
}

TEST(AveragePrecision, DuplicateAndFalsePositiveFixture) {
  const std::vector<LabelSet> gts{{{{0, 0, 10, 10}, {30, 30, 40, 40}}, {0, 0}, {64, 64}}};
  const std::vector<Detection> dets{
      {{0, 0, 10, 10}, 0, 0.9, 0},
      {{0, 0, 10, 9}, 0, 0.8, 0},
      {{50, 0, 60, 10}, 0, 0.7, 0},
  };
  const auto ap = average_precision(dets, gts, 0.5);
  ASSERT_TRUE(ap.has_value());
  // One of two ground truths found at precision 1: recall points 0..0.5.
  EXPECT_NEAR(*ap, 51.0 / 101.0, 1e-15);
  expect_same(ap, oracle_ap(dets, gts, 0.5, SizeBucket::all));
}

TEST(AveragePrecision, UndefinedWithoutGroundTruthInBucket) {
  const std::vector<LabelSet> gts{{{{0, 0, 40, 40}}, {0}, {64, 64}}};
  const std::vector<Detection> dets{{{0, 0, 40, 40}, 0, 0.9, 0}};
  EXPECT_FALSE(average_precision(dets, gts, 0.5, SizeBucket::small).has_value());
  const auto r = ap_report(dets, gts);
  EXPECT_FALSE(r.aps.has_value());
  EXPECT_FALSE(r.apm.has_value());
  EXPECT_EQ(r.apl, 1.0);
  EXPECT_EQ(ap_report_csv_row(r), "1,1,1,undefined,undefined,1");
  EXPECT_EQ(ap_report_csv_header(), "ap,ap50,ap75,aps,apm,apl");
}

TEST(AveragePrecision, EmptyDetectionsGiveZeros) {
  const std::vector<LabelSet> gts{{{{0, 0, 2, 2}, {0, 0, 6, 6}}, {0, 1}, {64, 64}}};
  const auto r = ap_report({}, gts);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.aps, 0.0);
  EXPECT_EQ(r.apm, 0.0);
  EXPECT_FALSE(r.apl.has_value());
}

TEST(AveragePrecision, RejectsBadInput) {
  const std::vector<LabelSet> gts{{{{0, 0, 2, 2}}, {0}, {64, 64}}};
  EXPECT_THROW(average_precision(std::vector<Detection>{{{0, 0, 2, 2}, 0, 0.5, 3}}, gts, 0.5), InvalidInput);
  EXPECT_THROW(average_precision(std::vector<Detection>{{{0, 0, 0, 2}, 0, 0.5, 0}}, gts, 0.5), InvalidBox);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_instance(rng);
    for (auto bucket : {SizeBucket::all, SizeBucket::small, SizeBucket::medium, SizeBucket::large}) {
      for (int t = 0; t < 10; ++t) {
        const double thr = (10.0 + t) / 20.0;
        expect_same(average_precision(inst.dets, inst.gts, thr, bucket), oracle_ap(inst.dets, inst.gts, thr, bucket));
      }
    }
  }
}

TEST(AveragePrecision, NonIncreasingInThreshold) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_instance(rng);
    std::optional<double> prev;
    for (int t = 9; t >= 0; --t) {
      const auto ap = average_precision(inst.dets, inst.gts, (10.0 + t) / 20.0);
      if (!ap) break;
      if (prev) {
        EXPECT_GE(*ap, *prev - 1e-12) << "trial " << trial;
      }
      prev = ap;
    }
  }
}

TEST(AveragePrecision, LowScoredUnmatchedDetectionNeverHelps) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = random_instance(rng);
    const auto before = average_precision(inst.dets, inst.gts, 0.5);
    if (!before) continue;
    inst.dets.push_back({{60, 60, 63, 63}, 0, 0.01, 0});
    const auto after = average_precision(inst.dets, inst.gts, 0.5);
    bool hits = false;
    for (const auto& b : inst.gts[0].boxes) hits |= iou(b, inst.dets.back().box) >= 0.5;
    if (!hits) {
      EXPECT_LE(*after, *before + 1e-15);
    }
  }
}

}  // namespace
