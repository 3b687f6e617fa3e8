#include "selfdistill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "selfdistill/kernels.hpp"
#include "selfdistill/rng.hpp"

namespace selfdistill {
namespace {

constexpr std::uint64_t kBackboneStream = 11;
constexpr std::uint64_t kHeadStream = 12;
constexpr std::uint64_t kBatchStream = 21;

void add_scaled(FeaturePyramid& into, double alpha, const FeaturePyramid& x) {
  for (std::size_t p = 0; p < into.scale_count(); ++p) kernels::axpy(alpha, x.scale(p).values(), into.scale(p).values());
}

void add_encoder(LabelEncoderParams& into, const LabelEncoderParams& x, double alpha = 1.0) {
  for (std::size_t p = 0; p < into.gain.size(); ++p) {
    into.gain[p] += alpha * x.gain[p];
    into.bias[p] += alpha * x.bias[p];
  }
  for (std::size_t t = 0; t < into.mixing.size(); ++t) into.mixing[t] += alpha * x.mixing[t];
}

LabelEncoderParams zero_encoder(std::size_t scales) {
  LabelEncoderParams z;
  z.gain.assign(scales, 0.0);
  z.bias.assign(scales, 0.0);
  z.mixing.fill(0.0);
  return z;
}

double encoder_squared_norm(const LabelEncoderParams& e) {
  double total = 0.0;
  for (double v : e.gain) total += v * v;
  for (double v : e.bias) total += v * v;
  for (double v : e.mixing) total += v * v;
  return total;
}

bool pyramid_finite(const FeaturePyramid& k) {
  for (const Map2D& m : k.scales()) {
    for (double v : m.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool encoder_finite(const LabelEncoderParams& e) {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(e.gain.begin(), e.gain.end(), finite) && std::all_of(e.bias.begin(), e.bias.end(), finite) &&
         std::all_of(e.mixing.begin(), e.mixing.end(), finite);
}

void add_encoder_blocks(ParameterSet& set, const LabelEncoderParams& e) {
  const std::size_t p = e.gain.size();
  set.add({"encoder.gain", {p}, e.gain});
  set.add({"encoder.bias", {p}, e.bias});
  set.add({"encoder.mixing", {3, 3}, std::vector<double>(e.mixing.begin(), e.mixing.end())});
}

BatchResult batch_loss_impl(const ModelState& state, const TrainConfig& config,
                            std::span<const SyntheticScene* const> batch, double lambda, bool with_gradients,
                            bool backbone_gradients) {
  if (batch.empty()) throw InvalidInput("batch is empty");
  const auto& shapes = config.model.scales;
  const Gradients distill_grads =
      !with_gradients ? Gradients::none : (config.stop_teacher_gradient ? Gradients::first : Gradients::both);

  BatchResult result;
  if (with_gradients) {
    result.gradients = ModelGradients{state.backbone.parameters().zeros_like(), state.head.parameters().zeros_like(),
                                      zero_encoder(shapes.size())};
  }
  double l_det = 0.0;
  double l_distill = 0.0;
  for (const SyntheticScene* scene : batch) {
    StudentModel::Activations acts;
    const FeaturePyramid k = state.backbone.forward(scene->pixels, with_gradients ? &acts : nullptr);
    const FeaturePyramid rendered = render_labels(scene->labels, shapes, config.model.num_classes);
    const FeaturePyramid ke = apply_label_encoder(rendered, state.encoder);
    if (!pyramid_finite(k) || !pyramid_finite(ke)) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      result.loss = {nan, nan, nan};
      result.gradients.reset();
      return result;
    }

    DetectionLossValue det_k = detection_loss(state.head, k, scene->labels, with_gradients);
    DetectionLossValue det_ke = detection_loss(state.head, ke, scene->labels, with_gradients);
    l_det += det_k.value + det_ke.value;

    LossValue distill;
    if (config.distillation) {
      distill = distill_loss(config.loss, k, ke, config.temperature, distill_grads);
      l_distill += distill.value;
    }
    if (!with_gradients) continue;

    ModelGradients& g = *result.gradients;
    g.head.axpy(1.0, *det_k.head_gradient);
    g.head.axpy(1.0, *det_ke.head_gradient);

    FeaturePyramid& grad_k = *det_k.input_gradient;
    FeaturePyramid& grad_ke = *det_ke.input_gradient;
    if (distill.gradient_wrt_first) add_scaled(grad_k, lambda, *distill.gradient_wrt_first);
    if (distill.gradient_wrt_second) add_scaled(grad_ke, lambda, *distill.gradient_wrt_second);

    if (backbone_gradients) state.backbone.backward(acts, grad_k, g.backbone);
    add_encoder(g.encoder, label_encoder_backward(rendered, state.encoder, grad_ke));
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  result.loss.l_det = l_det * inv_b;
  result.loss.l_distill = l_distill * inv_b;
  result.loss.l_total = result.loss.l_det + lambda * result.loss.l_distill;
  if (with_gradients) {
    ModelGradients& g = *result.gradients;
    g.backbone.scale(inv_b);
    g.head.scale(inv_b);
    LabelEncoderParams scaled = zero_encoder(shapes.size());
    add_encoder(scaled, g.encoder, inv_b);
    g.encoder = std::move(scaled);
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  lr.validate();
  lambda.validate();
  phase.validate();
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidConfig("temperature must be positive");
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (eval_interval <= 0) throw InvalidConfig("eval_interval must be positive");
  if (!(grad_clip >= 0.0)) throw InvalidConfig("grad_clip must be nonnegative");
  if (!(decode.score_threshold >= 0.0 && decode.score_threshold <= 1.0)) {
    throw InvalidConfig("score_threshold must lie in [0, 1]");
  }
  if (!(decode.nms_iou > 0.0 && decode.nms_iou <= 1.0)) throw InvalidConfig("nms_iou must lie in (0, 1]");
  if (decode.max_detections == 0) throw InvalidConfig("max_detections must be positive");
}

// --- RunLog -----------------------------------------------------------------

void RunLog::append(const RunLogRow& row) {
  if (!rows_.empty() && row.step <= rows_.back().step) {
    throw InvalidInput(fmt::format("run log step {} does not follow step {}", row.step, rows_.back().step));
  }
  rows_.push_back(row);
}

std::string RunLog::csv_header() { return "step,lr,lambda,l_det,l_distill,ratio,ap_surrogate"; }

void RunLog::write_csv(std::ostream& out) const {
  out << csv_header() << '\n';
  for (const auto& r : rows_) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.step, r.lr, r.lambda, r.l_det, r.l_distill, r.ratio, r.ap_surrogate);
  }
}

std::string RunLog::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

double loss_ratio(double lambda, double l_distill, double l_total) {
  if (lambda == 0.0 || l_total == 0.0) return 0.0;
  return lambda * l_distill / l_total;
}

// --- ModelState ---------------------------------------------------------------

ModelState ModelState::initial(const TrainConfig& config) {
  return ModelState{
      StudentModel(config.model, Rng::derive(config.seed, kBackboneStream)),
      DetectionHead(config.model.num_classes, config.model.head_hidden, Rng::derive(config.seed, kHeadStream)),
      LabelEncoderParams::identity(config.model.scales.size()),
  };
}

ParameterSet ModelState::flatten() const {
  ParameterSet set = backbone.parameters();
  set.append(head.parameters());
  add_encoder_blocks(set, encoder);
  return set;
}

ModelState ModelState::unflatten(const ModelShape& shape, const ParameterSet& params) {
  ParameterSet backbone_params = StudentModel::layout(shape);
  ParameterSet head_params = DetectionHead::layout(shape.num_classes, shape.head_hidden);
  auto take = [&](ParameterSet& into) {
    for (std::size_t i = 0; i < into.block_count(); ++i) {
      const ParamBlock& src = params.block(params.index_of(into.block(i).name));
      if (src.shape != into.block(i).shape) throw ShapeError(fmt::format("block '{}' has the wrong shape", src.name));
      into.block(i).values = src.values;
    }
  };
  take(backbone_params);
  take(head_params);

  const std::size_t scales = shape.scales.size();
  LabelEncoderParams encoder = zero_encoder(scales);
  const auto& gain = params.block(params.index_of("encoder.gain"));
  const auto& bias = params.block(params.index_of("encoder.bias"));
  const auto& mixing = params.block(params.index_of("encoder.mixing"));
  if (gain.values.size() != scales || bias.values.size() != scales || mixing.values.size() != 9) {
    throw ShapeError("encoder blocks do not match the model shape");
  }
  encoder.gain = gain.values;
  encoder.bias = bias.values;
  std::copy(mixing.values.begin(), mixing.values.end(), encoder.mixing.begin());
  if (params.block_count() != backbone_params.block_count() + head_params.block_count() + 3) {
    throw ShapeError("parameter set has blocks the model does not use");
  }
  return ModelState{StudentModel(shape, std::move(backbone_params)),
                    DetectionHead(shape.num_classes, shape.head_hidden, std::move(head_params)), std::move(encoder)};
}

ParameterSet ModelGradients::flatten() const {
  ParameterSet set = backbone;
  set.append(head);
  add_encoder_blocks(set, encoder);
  return set;
}

// --- Losses -------------------------------------------------------------------

LossBreakdown total_loss(const FeaturePyramid& k, const FeaturePyramid& ke, const LabelSet& labels,
                         const DetectionHead& head, double lambda, DistillLoss loss_id, double temperature) {
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be nonnegative");
  LossBreakdown out;
  out.l_det = detection_loss(head, k, labels).value + detection_loss(head, ke, labels).value;
  out.l_distill = distill_loss(loss_id, k, ke, temperature).value;
  out.l_total = out.l_det + lambda * out.l_distill;
  return out;
}

BatchResult batch_loss(const ModelState& state, const TrainConfig& config, std::span<const SyntheticScene> batch,
                       double lambda, bool with_gradients, bool backbone_gradients) {
  std::vector<const SyntheticScene*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return batch_loss_impl(state, config, ptrs, lambda, with_gradients, backbone_gradients);
}

// --- Training -----------------------------------------------------------------

DivergedError::DivergedError(Step step, RunLog partial)
    : Error(fmt::format("training diverged at step {}: loss or parameters are not finite", step)), step_(step), partial_(std::move(partial)) {}

std::optional<RunLogRow> DivergedError::last_finite_row() const {
  if (partial_.empty()) return std::nullopt;
  return partial_.rows().back();
}

TrainResult train(const TrainConfig& config, std::span<const SyntheticScene> train_set,
                  std::span<const SyntheticScene> eval_set, const StepObserver& observer) {
  config.validate();
  if (train_set.empty()) throw InvalidConfig("training set is empty");

  TrainResult result{RunLog{}, ModelState::initial(config)};
  ModelState& state = result.model;
  const Step total = config.total_steps();
  if (total == 0) return result;

  auto surrogate = [&]() { return eval_set.empty() ? 0.0 : evaluate(state, config, eval_set).ap.value_or(0.0); };

  Rng rng(Rng::derive(config.seed, kBatchStream));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t cursor = 0;

  double ap = surrogate();
  std::vector<const SyntheticScene*> batch(config.batch_size);
  for (Step step = 0; step < total; ++step) {
    const double lr = lr_at(config.lr, step);
    const double lambda = lambda_at(config.lambda, step);
    const bool frozen = is_frozen(config.phase, step);
    for (auto& slot : batch) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      slot = &train_set[order[cursor++]];
    }

    BatchResult br = batch_loss_impl(state, config, batch, lambda, true, !frozen);
    const LossBreakdown& loss = br.loss;
    if (!std::isfinite(loss.l_total) || !std::isfinite(loss.l_det) || !std::isfinite(loss.l_distill)) {
      throw DivergedError(step, std::move(result.log));
    }

    ModelGradients& g = *br.gradients;
    if (config.grad_clip > 0.0) {
      double sq = g.head.squared_norm() + encoder_squared_norm(g.encoder);
      if (!frozen) sq += g.backbone.squared_norm();
      const double norm = std::sqrt(sq);
      if (norm > config.grad_clip) {
        const double s = config.grad_clip / norm;
        g.backbone.scale(s);
        g.head.scale(s);
        LabelEncoderParams scaled = zero_encoder(g.encoder.gain.size());
        add_encoder(scaled, g.encoder, s);
        g.encoder = std::move(scaled);
      }
    }
    if (!frozen) state.backbone.parameters().axpy(-lr, g.backbone);
    state.head.parameters().axpy(-lr, g.head);
    add_encoder(state.encoder, g.encoder, -lr);
    if (!state.backbone.parameters().all_finite() || !state.head.parameters().all_finite() ||
        !encoder_finite(state.encoder)) {
      throw DivergedError(step, std::move(result.log));
    }

    if ((step + 1) % config.eval_interval == 0 || step + 1 == total) ap = surrogate();

    const RunLogRow row{step, lr, lambda, loss.l_det, loss.l_distill, loss_ratio(lambda, loss.l_distill, loss.l_total), ap};
    result.log.append(row);
    if (observer) observer(row);
  }
  return result;
}

std::vector<Detection> predict(const ModelState& state, const TrainConfig& config,
                               std::span<const SyntheticScene> scenes) {
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const FeaturePyramid k = state.backbone.forward(scenes[i].pixels);
    auto found = decode_detections(state.head, k, scenes[i].size, i, config.decode);
    dets.insert(dets.end(), found.begin(), found.end());
  }
  return dets;
}

ApReport evaluate(const ModelState& state, const TrainConfig& config, std::span<const SyntheticScene> scenes) {
  const std::vector<Detection> dets = predict(state, config, scenes);
  std::vector<LabelSet> gts;
  gts.reserve(scenes.size());
  for (const auto& s : scenes) gts.push_back(s.labels);
  return ap_report(dets, gts);
}

// --- Calibration probe ----------------------------------------------------------

TrainingRatioProbe::TrainingRatioProbe(TrainConfig base, std::vector<SyntheticScene> train_set, Step iterations)
    : base_(std::move(base)), train_set_(std::move(train_set)), iterations_(iterations) {
  if (iterations_ <= 0) throw InvalidConfig("probe iterations must be positive");
  if (train_set_.empty()) throw InvalidConfig("probe training set is empty");
  config_for(1.0).validate();
}

TrainConfig TrainingRatioProbe::config_for(double lambda) const {
  TrainConfig cfg = base_;
  cfg.distillation = true;
  cfg.lambda = LambdaSchedule{0, iterations_, lambda, lambda};
  cfg.phase = PhasePlan{0, iterations_};
  cfg.lr.decay_start_step = iterations_;
  cfg.lr.end_step = iterations_ + 1;
  return cfg;
}

double TrainingRatioProbe::mean_ratio(double lambda) const {
  const TrainResult run = train(config_for(lambda), train_set_, {});
  double total = 0.0;
  for (const auto& row : run.log.rows()) total += row.ratio;
  return total / static_cast<double>(run.log.size());
}

}  // namespace selfdistill
