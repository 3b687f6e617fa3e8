#include <cmath>

#include <gtest/gtest.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/model.hpp"
#include "support.hpp"

using namespace selfdistill;
using testing_support::random_pyramid;

namespace {

DetectionHead zero_head(int classes, std::size_t hidden) {
  return DetectionHead(classes, hidden, DetectionHead::layout(classes, hidden));
}

void randomize(ParameterSet& params, Rng& rng, double scale) {
  for (std::size_t i = 0; i < params.total_size(); ++i) params.flat(i) = scale * rng.normal();
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a) + std::abs(b)); }

TEST(AssignTargets, LeftHalfOfFourByFour) {
  const LabelSet labels{{{0, 0, 2, 4}}, {1}, {4, 4}};
  const std::vector<ScaleShape> shapes{{4, 4}};
  const auto t = assign_targets(labels, shapes);
  int positives = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const CellTarget& cell = t[0][r * 4 + c];
      EXPECT_EQ(cell.label, c < 2 ? 2 : 0);
      positives += cell.label > 0;
    }
  }
  EXPECT_EQ(positives, 8);
  const auto& first = t[0][0].offsets;
  EXPECT_DOUBLE_EQ(first[0], 0.5 / 4);
  EXPECT_DOUBLE_EQ(first[1], 0.5 / 4);
  EXPECT_DOUBLE_EQ(first[2], 1.5 / 4);
  EXPECT_DOUBLE_EQ(first[3], 3.5 / 4);
}

TEST(AssignTargets, SmallestBoxWinsAndRightEdgeIsOpen) {
  const LabelSet labels{{{0, 0, 4, 4}, {0, 0, 1, 1}, {2, 0, 2.5, 1}}, {0, 1, 2}, {4, 4}};
  const auto t = assign_targets(labels, std::vector<ScaleShape>{{4, 4}});
  EXPECT_EQ(t[0][0].label, 2);
  EXPECT_EQ(t[0][1].label, 1);
  // Centre 2.5 sits on the right edge of the third box.
  EXPECT_EQ(t[0][2].label, 1);
}

TEST(DetectionLoss, UniformLogitsCostLogOfClassCount) {
  const auto head = zero_head(2, 4);
  Rng rng(1);
  const auto k = random_pyramid(rng, {{4, 4}, {2, 2}});
  const auto loss = detection_loss(head, k, LabelSet{{}, {}, {8, 8}});
  EXPECT_NEAR(loss.classification, std::log2(3.0), 1e-12);
  EXPECT_EQ(loss.regression, 0.0);
  EXPECT_EQ(loss.positives, 0u);
  EXPECT_NEAR(loss.value, std::log2(3.0), 1e-12);
}

TEST(DetectionLoss, ZeroOutputsRegressMeanSquaredOffsets) {
  const auto head = zero_head(2, 4);
  const LabelSet labels{{{0, 0, 2, 4}}, {1}, {4, 4}};
  Rng rng(2);
  const auto k = random_pyramid(rng, {{4, 4}});
  const auto targets = assign_targets(labels, k.shapes());
  double expected = 0.0;
  for (const auto& t : targets[0]) {
    if (t.label == 0) continue;
    for (double o : t.offsets) expected += o * o;
  }
  const auto loss = detection_loss(head, k, labels);
  EXPECT_EQ(loss.positives, 8u);
  EXPECT_NEAR(loss.regression, expected / 8.0, 1e-12);
}

TEST(DetectionLoss, CertainBackgroundOnEmptySceneCostsNothing) {
  auto head = zero_head(3, 4);
  head.parameters().values(head.parameters().index_of("head.b2"))[0] = 60.0;
  Rng rng(3);
  const auto k = random_pyramid(rng, {{4, 4}});
  const auto loss = detection_loss(head, k, LabelSet{{}, {}, {4, 4}});
  EXPECT_LT(loss.value, 1e-20);
}

TEST(DetectionLoss, RejectsInvalidLabels) {
  const auto head = zero_head(2, 4);
  Rng rng(4);
  const auto k = random_pyramid(rng, {{4, 4}});
  EXPECT_THROW(detection_loss(head, k, LabelSet{{{0, 0, 2, 2}}, {5}, {4, 4}}), InvalidInput);
  EXPECT_THROW(detection_loss(head, k, LabelSet{{{0, 0, 9, 2}}, {0}, {4, 4}}), InvalidInput);
}

TEST(DetectionLoss, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  DetectionHead head(3, 5, 17);
  randomize(head.parameters(), rng, 0.5);
  auto k = random_pyramid(rng, {{4, 4}, {2, 2}});
  const LabelSet labels{{{1, 1, 5, 3}, {0, 4, 8, 8}}, {0, 2}, {8, 8}};
  const auto loss = detection_loss(head, k, labels, true);
  ASSERT_TRUE(loss.head_gradient && loss.input_gradient);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < head.parameters().total_size(); ++i) {
    DetectionHead plus = head, minus = head;
    plus.parameters().flat(i) += eps;
    minus.parameters().flat(i) -= eps;
    const double numeric =
        (detection_loss(plus, k, labels).value - detection_loss(minus, k, labels).value) / (2 * eps);
    auto g = *loss.head_gradient;
    EXPECT_LT(relative_error(g.flat(i), numeric), 1e-6) << "param " << i;
  }
  for (std::size_t p = 0; p < k.scale_count(); ++p) {
    for (std::size_t i = 0; i < k.scale(p).size(); ++i) {
      auto plus = k, minus = k;
      plus.scale(p).values()[i] += eps;
      minus.scale(p).values()[i] -= eps;
      const double numeric =
          (detection_loss(head, plus, labels).value - detection_loss(head, minus, labels).value) / (2 * eps);
      EXPECT_LT(relative_error(loss.input_gradient->scale(p).values()[i], numeric), 1e-6);
    }
  }
}

TEST(StudentModel, ForwardShapesAndDeterminism) {
  const ModelShape shape;
  const StudentModel a(shape, 9), b(shape, 9), c(shape, 10);
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_NE(a.parameters(), c.parameters());
  Rng rng(6);
  std::vector<double> image(shape.image.width * shape.image.height);
  for (double& v : image) v = rng.uniform();
  const auto k = a.forward(image);
  EXPECT_EQ(k.shapes(), shape.scales);
  k.validate();
}

TEST(StudentModel, BackwardMatchesFiniteDifferences) {
  ModelShape shape;
  shape.image = {16, 16};
  shape.scales = {{4, 4}, {2, 2}};
  shape.backbone_channels = 2;
  StudentModel model(shape, 4);
  Rng rng(7);
  std::vector<double> image(256);
  for (double& v : image) v = rng.uniform();
  const auto upstream = random_pyramid(rng, shape.scales);
  auto objective = [&](const StudentModel& m) {
    const auto k = m.forward(image);
    double total = 0.0;
    for (std::size_t p = 0; p < k.scale_count(); ++p) {
      for (std::size_t i = 0; i < k.scale(p).size(); ++i) total += k.scale(p).values()[i] * upstream.scale(p).values()[i];
    }
    return total;
  };
  StudentModel::Activations acts;
  model.forward(image, &acts);
  ParameterSet grad = model.parameters().zeros_like();
  model.backward(acts, upstream, grad);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < grad.total_size(); ++i) {
    StudentModel plus = model, minus = model;
    plus.parameters().flat(i) += eps;
    minus.parameters().flat(i) -= eps;
    const double numeric = (objective(plus) - objective(minus)) / (2 * eps);
    EXPECT_LT(relative_error(grad.flat(i), numeric), 1e-6) << "param " << i;
  }
}

TEST(StudentModel, ValidatesShapes) {
  ModelShape shape;
  shape.scales = {{5, 5}};
  EXPECT_THROW(shape.validate(), InvalidConfig);
  ModelShape good;
  EXPECT_THROW(StudentModel(good, ParameterSet{}), ShapeError);
}

TEST(StudentModel, StaysSmall) {
  const ModelShape shape;
  const StudentModel model(shape, 1);
  const DetectionHead head(shape.num_classes, shape.head_hidden, 1);
  EXPECT_LT(model.parameters().total_size() + head.parameters().total_size(), 100000u);
}

TEST(NonMaxSuppression, SuppressesSameClassOverlapsOnly) {
  const std::vector<Detection> dets{
      {{0, 0, 10, 10}, 0, 0.9, 0},
      {{0, 0, 10, 9}, 0, 0.8, 0},
      {{0, 0, 10, 9}, 1, 0.7, 0},
      {{0, 0, 10, 9}, 0, 0.6, 1},
      {{20, 20, 30, 30}, 0, 0.5, 0},
  };
  const auto kept = non_max_suppression(dets, 0.5, 100);
  ASSERT_EQ(kept.size(), 4u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_EQ(kept[1].score, 0.7);
  EXPECT_EQ(kept[2].score, 0.6);
  EXPECT_EQ(kept[3].score, 0.5);
  EXPECT_EQ(non_max_suppression(dets, 0.5, 2).size(), 2u);
}

TEST(DecodeDetections, BoxesStayInsideTheImage) {
  Rng rng(8);
  DetectionHead head(3, 6, 2);
  randomize(head.parameters(), rng, 1.0);
  const auto k = random_pyramid(rng, {{8, 8}, {4, 4}});
  DecodeOptions opts;
  opts.score_threshold = 0.0;
  opts.nms_iou = 1.0;
  opts.max_detections = 1000;
  const auto dets = decode_detections(head, k, {64, 64}, 3, opts);
  EXPECT_EQ(dets.size(), 80u);
  for (const auto& d : dets) {
    EXPECT_TRUE(d.box.well_formed());
    EXPECT_GE(d.box.x_min, 0.0);
    EXPECT_LE(d.box.x_max, 64.0);
    EXPECT_EQ(d.image_id, 3u);
    EXPECT_GE(d.class_id, 0);
    EXPECT_LT(d.class_id, 3);
  }
  for (std::size_t i = 1; i < dets.size(); ++i) EXPECT_GE(dets[i - 1].score, dets[i].score);
}

}  // namespace
