#include "selfdistill/cli.hpp"

#include <chrono>
#include <filesystem>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>

#include "selfdistill/calibrate.hpp"
#include "selfdistill/config.hpp"
#include "selfdistill/errors.hpp"
#include "selfdistill/experiments.hpp"
#include "selfdistill/kernels.hpp"

namespace selfdistill::cli {
namespace {
namespace fs = std::filesystem;

struct ConfigFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "Configuration file (defaults apply when omitted)");
    cmd.add_option("--out", out_dir, "Output directory (overrides output_dir)");
    cmd.add_option("--seed", seed, "Seed (overrides seed)");
    cmd.add_option("--set", overrides, "KEY=VALUE override, repeatable");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(config, o);
    if (seed) config.train.seed = *seed;
    if (!out_dir.empty()) config.output_dir = out_dir;
    config.validate();
    return config;
  }
};

void write_metadata(const std::string& dir, const std::string& command) {
  fs::create_directories(dir);
  const auto now = std::chrono::system_clock::now();
  write_text_file((fs::path(dir) / "metadata.txt").string(),
                  fmt::format("command = {}\ntimestamp = {:%Y-%m-%dT%H:%M:%SZ}\nisa = {}\n", command,
                              fmt::gmtime(std::chrono::system_clock::to_time_t(now)),
                              kernels::to_string(kernels::active_isa())));
}

int cmd_train(const ConfigFlags& flags, std::ostream& out) {
  const ExperimentConfig config = flags.resolve();
  write_metadata(config.output_dir, "train");
  try {
    const ExperimentResult result = run_experiment(config);
    write_experiment(config.output_dir, config, result);
    out << fmt::format("trained {} steps, output in {}\n", config.train.total_steps(), config.output_dir);
    out << report_csv(result.report);
    return kOk;
  } catch (const DivergedError& e) {
    write_text_file((fs::path(config.output_dir) / "runlog.csv").string(), e.partial_log().to_csv());
    throw;
  }
}

struct CalibrateFlags {
  CalibrationOptions options;
  Step iterations = 200;
  bool analytic = false;
  double l_det = 1.0;
  double l_distill = 0.1;
};

int cmd_calibrate(const ConfigFlags& config_flags, const CalibrateFlags& flags, std::ostream& out) {
  flags.options.validate();
  CalibrationResult result;
  std::string out_dir;
  if (flags.analytic) {
    const ConstantLossProbe probe(flags.l_det, flags.l_distill);
    result = calibrate_lambda(probe, flags.options);
    out_dir = config_flags.out_dir;
    out << fmt::format("closed_form_lambda = {}\n", probe.closed_form_lambda(flags.options.target));
  } else {
    const ExperimentConfig config = config_flags.resolve();
    const TrainingRatioProbe probe = make_training_probe(config, flags.iterations);
    result = calibrate_lambda(probe, flags.options);
    out_dir = config.output_dir;
  }
  if (!out_dir.empty()) {
    write_metadata(out_dir, "calibrate");
    write_text_file((fs::path(out_dir) / "calibration.csv").string(), calibration_trace_csv(result));
  }
  out << fmt::format("lambda_star = {}\nachieved_ratio = {}\nprobes_used = {}\nconverged = {}\n", result.lambda_star,
                     result.achieved_ratio, result.probes_used, result.converged);
  for (const auto& w : result.warnings) out << "warning: " << w << '\n';
  return kOk;
}

int cmd_compare(const std::string& spec_path, std::string out_dir, std::size_t jobs, std::ostream& out) {
  const CompareSpec spec = load_compare_spec(spec_path);
  if (out_dir.empty()) out_dir = spec.base.output_dir;
  write_metadata(out_dir, "compare");
  const CompareResult result = run_compare(spec, out_dir, jobs);
  const std::string csv = comparison_csv(result);
  write_text_file((fs::path(out_dir) / "comparison.csv").string(), csv);
  out << csv;
  return kOk;
}

struct GradcheckFlags {
  std::string loss = "js";
  std::string sizes = "16x16,8x8,4x4";
  std::optional<double> epsilon;
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  double grid = 1.0 / 64.0;
  std::optional<double> threshold;
};

int cmd_gradcheck(const GradcheckFlags& flags, std::ostream& out, std::ostream& err) {
  GradcheckOptions options;
  try {
    options.loss = parse_distill_loss(flags.loss);
  } catch (const Error& e) {
    throw InvalidConfig(fmt::format("--loss: {}", e.what()));
  }
  ExperimentConfig scratch;
  set_config_value(scratch, "scales", flags.sizes);
  options.sizes = scratch.train.model.scales;
  options.epsilon = flags.epsilon;
  options.trials = flags.trials;
  options.seed = flags.seed;
  options.temperature = flags.temperature;
  options.grid = flags.grid;
  const double threshold = flags.threshold.value_or(options.loss == DistillLoss::mse ? 1e-6 : 1e-4);

  const GradcheckSummary s = run_gradcheck(options);
  out << fmt::format("loss = {}\ntrials = {}\nepsilon = {}\nmax_relative_error = {}\nthreshold = {}\n",
                     to_string(options.loss), options.trials, options.effective_epsilon(), s.max_relative_error, threshold);
  if (s.max_relative_error < threshold) return kOk;
  err << fmt::format("gradient check failed: worst trial {} (seed {}), scale {}, element {}, relative error {}\n",
                     s.worst_trial, s.worst_seed, s.worst_scale, s.worst_index, s.max_relative_error);
  return kDiverged;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-distillation toolkit: training, lambda calibration, comparisons, gradient checks"};
  app.name("selfdistill");
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration and evaluate it");
  train_flags.attach(*train_cmd);

  ConfigFlags calib_config;
  CalibrateFlags calib;
  auto* calib_cmd = app.add_subcommand("calibrate", "Bisect lambda to a target distillation loss share");
  calib_config.attach(*calib_cmd);
  calib_cmd->add_option("--target", calib.options.target, "Target ratio in (0, 1)");
  calib_cmd->add_option("--lo", calib.options.lo, "Lower lambda bracket");
  calib_cmd->add_option("--hi", calib.options.hi, "Upper lambda bracket");
  calib_cmd->add_option("--iters", calib.iterations, "Training iterations per probe");
  calib_cmd->add_option("--tolerance", calib.options.tolerance, "Accepted ratio error");
  calib_cmd->add_option("--max-probes", calib.options.max_probes, "Probe budget");
  calib_cmd->add_flag("--analytic", calib.analytic, "Use constant losses instead of training");
  calib_cmd->add_option("--l-det", calib.l_det, "Detection loss of the analytic probe");
  calib_cmd->add_option("--l-distill", calib.l_distill, "Distillation loss of the analytic probe");

  std::string spec_path;
  std::string compare_out;
  std::size_t jobs = 0;
  auto* compare_cmd = app.add_subcommand("compare", "Run every variant x seed of a comparison spec");
  compare_cmd->add_option("--spec", spec_path, "Comparison spec file")->required();
  compare_cmd->add_option("--out", compare_out, "Output directory (defaults to the spec's output_dir)");
  compare_cmd->add_option("--jobs", jobs, "Concurrent runs (0 = hardware threads)");

  GradcheckFlags grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of distillation loss gradients");
  grad_cmd->add_option("--loss", grad.loss, "mse, kl or js");
  grad_cmd->add_option("--sizes", grad.sizes, "Scale shapes, e.g. 16x16,8x8");
  grad_cmd->add_option("--epsilon", grad.epsilon, "Central difference step (1e-3 for mse, 1e-4 otherwise)");
  grad_cmd->add_option("--trials", grad.trials, "Random pyramid pairs");
  grad_cmd->add_option("--seed", grad.seed, "Seed");
  grad_cmd->add_option("--temperature", grad.temperature, "Softmax temperature");
  grad_cmd->add_option("--grid", grad.grid, "Round entries to this grid, 0 for continuous values");
  grad_cmd->add_option("--threshold", grad.threshold, "Maximum relative error (1e-6 for mse, 1e-4 otherwise)");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, out);
    if (*calib_cmd) return cmd_calibrate(calib_config, calib, out);
    if (*compare_cmd) return cmd_compare(spec_path, compare_out, jobs, out);
    return cmd_gradcheck(grad, out, err);
  } catch (const CalibrationBracketError& e) {
    err << "error: " << e.what() << '\n';
    return kBracketFailure;
  } catch (const DivergedError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }
}

}  // namespace selfdistill::cli
