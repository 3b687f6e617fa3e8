#include "selfdistill/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <fmt/format.h>

#include "selfdistill/checkpoint.hpp"
#include "selfdistill/dataset.hpp"
#include "selfdistill/errors.hpp"
#include "selfdistill/rng.hpp"

namespace selfdistill {
namespace fs = std::filesystem;

ExperimentResult run_experiment(const ExperimentConfig& config, const StepObserver& observer) {
  config.validate();
  const auto train_set = generate_dataset(config.train_dataset_seed(), config.train_dataset());
  const auto eval_set = generate_dataset(config.eval_dataset_seed(), config.eval_dataset());
  TrainResult run = train(config.train, train_set, eval_set, observer);
  ApReport report = evaluate(run.model, config.train, eval_set);
  return {std::move(run.log), std::move(run.model), report};
}

std::string report_csv(const ApReport& report) {
  return ap_report_csv_header() + "\n" + ap_report_csv_row(report) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  out << text;
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

void write_experiment(const std::string& dir, const ExperimentConfig& config, const ExperimentResult& result) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_text_file((d / "runlog.csv").string(), result.log.to_csv());
  write_text_file((d / "report.csv").string(), report_csv(result.report));
  write_text_file((d / "config.txt").string(), serialize_config(config));
  save_checkpoint((d / "checkpoint.bin").string(), result.model.flatten());
}

TrainingRatioProbe make_training_probe(const ExperimentConfig& config, Step iterations) {
  config.validate();
  return TrainingRatioProbe(config.train, generate_dataset(config.train_dataset_seed(), config.train_dataset()),
                            iterations);
}

std::string calibration_trace_csv(const CalibrationResult& result) {
  std::string out = "lambda,ratio,lo,hi\n";
  for (const auto& p : result.trace) out += fmt::format("{},{},{},{}\n", p.lambda, p.ratio, p.lo, p.hi);
  return out;
}

// --- Compare --------------------------------------------------------------------

namespace {

struct Job {
  const CompareVariant* variant;
  std::uint64_t seed;
};

CompareRun run_job(const Job& job, const std::string& out_dir) {
  ExperimentConfig config = job.variant->config;
  config.train.seed = job.seed;
  const std::string dir = (fs::path(out_dir) / job.variant->name / fmt::format("seed_{}", job.seed)).string();
  config.output_dir = dir;

  CompareRun run;
  run.variant = job.variant->name;
  run.seed = job.seed;
  try {
    const ExperimentResult result = run_experiment(config);
    write_experiment(dir, config, result);
    run.report = result.report;
    run.final_ap = result.log.empty() ? result.report.ap.value_or(0.0) : result.log.rows().back().ap_surrogate;
  } catch (const DivergedError& e) {
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / "runlog.csv").string(), e.partial_log().to_csv());
    write_text_file((fs::path(dir) / "error.txt").string(), std::string(e.what()) + "\n");
    run.diverged_at = e.step();
  }
  return run;
}

}  // namespace

CompareResult run_compare(const CompareSpec& spec, const std::string& out_dir, std::size_t max_parallel) {
  std::vector<const CompareVariant*> variants;
  for (const auto& v : spec.variants) variants.push_back(&v);
  std::sort(variants.begin(), variants.end(), [](auto* a, auto* b) { return a->name < b->name; });
  std::vector<std::uint64_t> seeds = spec.seeds;
  std::sort(seeds.begin(), seeds.end());

  std::vector<Job> jobs;
  for (auto* v : variants) {
    for (auto s : seeds) jobs.push_back({v, s});
  }

  CompareResult result;
  result.runs.resize(jobs.size());
  std::size_t workers = max_parallel ? max_parallel : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(jobs.size());
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        result.runs[i] = run_job(jobs[i], out_dir);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  pool.clear();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::map<std::uint64_t, std::vector<CompareRun*>> by_seed;
  for (auto& r : result.runs) by_seed[r.seed].push_back(&r);
  for (auto& [seed, runs] : by_seed) {
    for (auto* r : runs) {
      if (r->diverged_at) continue;
      r->rank = 1 + static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [&](const CompareRun* o) {
                  return !o->diverged_at && o->final_ap > r->final_ap;
                }));
    }
  }

  for (auto* v : variants) {
    VariantSummary s{v->name, 0.0, 0, 0};
    std::size_t finished = 0;
    for (const auto& r : result.runs) {
      if (r.variant != v->name) continue;
      if (r.diverged_at) {
        ++s.diverged;
        continue;
      }
      ++finished;
      s.mean_final_ap += r.final_ap;
      if (r.rank == 1) ++s.seeds_won;
    }
    if (finished) s.mean_final_ap /= static_cast<double>(finished);
    result.summary.push_back(s);
  }
  std::size_t best = 0;
  std::size_t holders = 0;
  for (const auto& s : result.summary) {
    if (s.seeds_won > best) {
      best = s.seeds_won;
      holders = 1;
      result.majority_winner = s.variant;
    } else if (s.seeds_won == best) {
      ++holders;
    }
  }
  if (holders != 1 || best == 0) result.majority_winner.clear();
  return result;
}

std::string comparison_csv(const CompareResult& result) {
  std::string out = "variant,seed,status," + ap_report_csv_header() + ",final_ap,rank,seed_winner\n";
  for (const auto& r : result.runs) {
    if (r.diverged_at) {
      out += fmt::format("{},{},diverged@{},undefined,undefined,undefined,undefined,undefined,undefined,undefined,,0\n",
                         r.variant, r.seed, *r.diverged_at);
      continue;
    }
    out += fmt::format("{},{},ok,{},{},{},{}\n", r.variant, r.seed, ap_report_csv_row(r.report), r.final_ap, r.rank,
                       r.rank == 1 ? 1 : 0);
  }
  out += "\nvariant,mean_final_ap,seeds_won,diverged\n";
  for (const auto& s : result.summary) {
    out += fmt::format("{},{},{},{}\n", s.variant, s.mean_final_ap, s.seeds_won, s.diverged);
  }
  out += fmt::format("majority_winner,{}\n", result.majority_winner.empty() ? "none" : result.majority_winner);
  return out;
}

// --- Gradient check ----------------------------------------------------------------

double GradcheckOptions::effective_epsilon() const {
  return epsilon.value_or(loss == DistillLoss::mse ? 1e-3 : 1e-4);
}

GradcheckSummary run_gradcheck(const GradcheckOptions& options) {
  if (options.trials == 0) throw InvalidInput("gradcheck needs at least one trial");
  if (options.sizes.empty()) throw InvalidInput("gradcheck needs at least one scale");
  if (!(options.grid >= 0.0)) throw InvalidInput("gradcheck grid must be nonnegative");
  auto draw = [&](Rng& rng) {
    const double v = rng.normal();
    return options.grid > 0.0 ? std::round(v / options.grid) * options.grid : v;
  };
  GradcheckSummary summary;
  for (std::size_t t = 0; t < options.trials; ++t) {
    const std::uint64_t seed = Rng::derive(options.seed, t);
    Rng rng(seed);
    FeaturePyramid k = FeaturePyramid::zeros(options.sizes);
    FeaturePyramid ke = FeaturePyramid::zeros(options.sizes);
    for (std::size_t p = 0; p < k.scale_count(); ++p) {
      for (double& v : k.scale(p).values()) v = draw(rng);
      for (double& v : ke.scale(p).values()) v = draw(rng);
    }
    const auto report = loss_gradient_check_report(options.loss, k, ke, options.effective_epsilon(), options.temperature);
    if (t == 0 || report.max_relative_error > summary.max_relative_error) {
      summary = {report.max_relative_error, t, seed, report.worst_scale, report.worst_index};
    }
  }
  return summary;
}

}  // namespace selfdistill
