#pragma once

// Orchestration shared by the command-line tool and the acceptance suite:
// single training experiments, the multi-seed comparison harness, and the
// random-pyramid gradient check.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selfdistill/config.hpp"
#include "selfdistill/divergence.hpp"
#include "selfdistill/metrics.hpp"
#include "selfdistill/trainer.hpp"

namespace selfdistill {

struct ExperimentResult {
  RunLog log;
  ModelState model;
  ApReport report;
};

// Generates the train and eval splits, trains, evaluates on the eval split.
// Throws DivergedError.
ExperimentResult run_experiment(const ExperimentConfig& config, const StepObserver& observer = {});

// Header line plus one row.
std::string report_csv(const ApReport& report);

// Writes runlog.csv, report.csv, checkpoint.bin and config.txt into dir.
void write_experiment(const std::string& dir, const ExperimentConfig& config, const ExperimentResult& result);
void write_text_file(const std::string& path, const std::string& text);

// Probe that trains on the config's training split.
TrainingRatioProbe make_training_probe(const ExperimentConfig& config, Step iterations);

// lambda,ratio,lo,hi per probe.
std::string calibration_trace_csv(const CalibrationResult& result);

struct CompareRun {
  std::string variant;
  std::uint64_t seed = 0;
  // Set when training diverged; the report is then empty.
  std::optional<Step> diverged_at;
  ApReport report;
  double final_ap = 0.0;
  // 1 = best among the variants that finished for this seed; ties share a
  // rank. 0 for diverged runs.
  std::size_t rank = 0;
};

struct VariantSummary {
  std::string variant;
  double mean_final_ap = 0.0;
  std::size_t seeds_won = 0;
  std::size_t diverged = 0;
};

struct CompareResult {
  // Sorted by variant name, then seed.
  std::vector<CompareRun> runs;
  std::vector<VariantSummary> summary;
  // The variant with strictly the most seed wins; empty on a tie.
  std::string majority_winner;
};

// Runs every variant x seed, up to max_parallel at once (0 = hardware
// concurrency), writing each run under out_dir/<variant>/seed_<n>/. The merged
// result does not depend on scheduling.
CompareResult run_compare(const CompareSpec& spec, const std::string& out_dir, std::size_t max_parallel = 0);
std::string comparison_csv(const CompareResult& result);

struct GradcheckOptions {
  DistillLoss loss = DistillLoss::js;
  std::vector<ScaleShape> sizes{{16, 16}, {8, 8}, {4, 4}};
  // Defaults to 1e-3 for mse (its central difference has no truncation
  // error) and 1e-4 otherwise.
  std::optional<double> epsilon;
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  // Entries are standard normals rounded to this grid; 0 keeps them
  // continuous. On the grid an element difference k - ke is either 0 or at
  // least one grid step, which keeps the gradient components well above the
  // rounding floor ulp(L) / epsilon of the finite difference.
  double grid = 1.0 / 64.0;

  double effective_epsilon() const;
};

struct GradcheckSummary {
  double max_relative_error = 0.0;
  std::size_t worst_trial = 0;
  std::uint64_t worst_seed = 0;
  std::size_t worst_scale = 0;
  std::size_t worst_index = 0;
};

// One fresh pyramid pair per trial.
GradcheckSummary run_gradcheck(const GradcheckOptions& options);

}  // namespace selfdistill
