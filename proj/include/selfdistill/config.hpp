#pragma once

// Flat `key = value` configuration, one setting per line, `#` starts a
// comment. Unknown keys are errors. See docs/formats.md for the key list.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "selfdistill/dataset.hpp"
#include "selfdistill/trainer.hpp"

namespace selfdistill {

struct ExperimentConfig {
  TrainConfig train;
  std::size_t train_count = 256;
  std::size_t eval_count = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  std::size_t min_object_size = 2;
  std::size_t max_object_size = 32;
  std::string output_dir = "out";

  DatasetParams train_dataset() const;
  DatasetParams eval_dataset() const;
  // Dataset seeds are derived from train.seed, so runs with equal seeds see
  // equal data whatever their loss or lambda settings.
  std::uint64_t train_dataset_seed() const;
  std::uint64_t eval_dataset_seed() const;

  // Throws InvalidConfig.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// All recognised keys, in serialization order.
const std::vector<std::string>& config_keys();

// Throws InvalidConfig naming the key for bad values or unknown keys.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& config, std::string_view key);
// "key=value".
void apply_override(ExperimentConfig& config, std::string_view assignment);

// Starts from the defaults; the result is validated. origin prefixes errors.
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "config");
ExperimentConfig load_config(const std::string& path);
// Every key, so parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

struct CompareVariant {
  std::string name;
  ExperimentConfig config;
};

// A base configuration (inline keys or `include = path`), `seeds = 1,2,3`,
// then `[variant NAME]` sections that may set only loss, distillation and
// lambda.* keys.
struct CompareSpec {
  ExperimentConfig base;
  std::vector<std::uint64_t> seeds;
  std::vector<CompareVariant> variants;
};

// base_dir resolves relative include paths.
CompareSpec parse_compare_spec(std::string_view text, std::string_view origin = "spec",
                               const std::string& base_dir = ".");
CompareSpec load_compare_spec(const std::string& path);

}  // namespace selfdistill
