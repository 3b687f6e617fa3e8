#pragma once

// End-to-end self-distillation at desk scale. Each image is passed through
// the student backbone (K) and the label encoder (K_e); the shared head is
// scored on both, and the distillation loss couples K and K_e:
//
//   L_total = L_det(H(K), Y) + L_det(H(K_e), Y) + lambda(step) * L_distill(K, K_e)
//
// Training is plain SGD. The backbone is frozen during the configured warmup
// phase; the head and label encoder always train.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfdistill/calibrate.hpp"
#include "selfdistill/dataset.hpp"
#include "selfdistill/divergence.hpp"
#include "selfdistill/errors.hpp"
#include "selfdistill/metrics.hpp"
#include "selfdistill/model.hpp"
#include "selfdistill/pyramid.hpp"
#include "selfdistill/schedule.hpp"

namespace selfdistill {

struct TrainConfig {
  std::uint64_t seed = 1;
  ModelShape model;
  DistillLoss loss = DistillLoss::js;
  // false skips the distillation term entirely (the no-distillation baseline).
  bool distillation = true;
  double temperature = 0.01;
  // Block distillation gradients from flowing into the label-enhanced pyramid.
  bool stop_teacher_gradient = false;
  LrSchedule lr;
  LambdaSchedule lambda;
  PhasePlan phase;
  std::size_t batch_size = 8;
  Step eval_interval = 20;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  DecodeOptions decode;

  Step total_steps() const { return phase.total_steps; }
  // Throws InvalidConfig.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct RunLogRow {
  Step step = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double l_det = 0.0;
  double l_distill = 0.0;
  // lambda * l_distill / l_total; 0 when lambda or l_total is 0.
  double ratio = 0.0;
  double ap_surrogate = 0.0;

  bool operator==(const RunLogRow&) const = default;
};

// Append-only, strictly increasing in step.
class RunLog {
 public:
  // Throws InvalidInput if row.step does not exceed the last step.
  void append(const RunLogRow& row);
  const std::vector<RunLogRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  std::size_t size() const { return rows_.size(); }

  static std::string csv_header();  // step,lr,lambda,l_det,l_distill,ratio,ap_surrogate
  void write_csv(std::ostream& out) const;
  std::string to_csv() const;

  bool operator==(const RunLog&) const = default;

 private:
  std::vector<RunLogRow> rows_;
};

double loss_ratio(double lambda, double l_distill, double l_total);

struct ModelState {
  StudentModel backbone;
  DetectionHead head;
  LabelEncoderParams encoder;

  // Deterministic initialization from config.seed.
  static ModelState initial(const TrainConfig& config);

  // One set holding backbone.*, head.* and encoder.{gain,bias,mixing}.
  ParameterSet flatten() const;
  static ModelState unflatten(const ModelShape& shape, const ParameterSet& params);
};

struct ModelGradients {
  ParameterSet backbone;
  ParameterSet head;
  LabelEncoderParams encoder;

  // Same layout as ModelState::flatten().
  ParameterSet flatten() const;
};

struct LossBreakdown {
  double l_det = 0.0;
  double l_distill = 0.0;
  double l_total = 0.0;
};

// Losses for one image given both pyramids: l_det sums the shared head's
// loss on k and on ke, l_total = l_det + lambda * l_distill.
LossBreakdown total_loss(const FeaturePyramid& k, const FeaturePyramid& ke, const LabelSet& labels,
                         const DetectionHead& head, double lambda, DistillLoss loss_id, double temperature = 1.0);

struct BatchResult {
  LossBreakdown loss;
  std::optional<ModelGradients> gradients;
};

// Mean losses (and their gradients) over a batch of scenes. A non-finite
// pyramid yields NaN losses and no gradients.
BatchResult batch_loss(const ModelState& state, const TrainConfig& config, std::span<const SyntheticScene> batch,
                       double lambda, bool with_gradients, bool backbone_gradients = true);

struct TrainResult {
  RunLog log;
  ModelState model;
};

class DivergedError : public Error {
 public:
  DivergedError(Step step, RunLog partial);
  Step step() const { return step_; }
  const RunLog& partial_log() const { return partial_; }
  std::optional<RunLogRow> last_finite_row() const;

 private:
  Step step_;
  RunLog partial_;
};

using StepObserver = std::function<void(const RunLogRow&)>;

// Runs config.total_steps() SGD steps; throws DivergedError on a non-finite loss.
TrainResult train(const TrainConfig& config, std::span<const SyntheticScene> train_set,
                  std::span<const SyntheticScene> eval_set, const StepObserver& observer = {});

std::vector<Detection> predict(const ModelState& state, const TrainConfig& config,
                               std::span<const SyntheticScene> scenes);
ApReport evaluate(const ModelState& state, const TrainConfig& config, std::span<const SyntheticScene> scenes);

// r(lambda) from a short training run with lambda held constant from step 0
// and the backbone never frozen.
class TrainingRatioProbe final : public RatioProbe {
 public:
  TrainingRatioProbe(TrainConfig base, std::vector<SyntheticScene> train_set, Step iterations);
  double mean_ratio(double lambda) const override;
  TrainConfig config_for(double lambda) const;

 private:
  TrainConfig base_;
  std::vector<SyntheticScene> train_set_;
  Step iterations_;
};

}  // namespace selfdistill
