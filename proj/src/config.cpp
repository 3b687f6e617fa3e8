#include "selfdistill/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/rng.hpp"

namespace selfdistill {
namespace {

constexpr std::uint64_t kTrainDataStream = 1;
constexpr std::uint64_t kEvalDataStream = 2;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw InvalidConfig(fmt::format("{}: '{}' is not a valid number", key, value));
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  const double v = parse_number<double>(key, value);
  if (!std::isfinite(v)) throw InvalidConfig(fmt::format("{}: value must be finite", key));
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw InvalidConfig(fmt::format("{}: expected true or false, got '{}'", key, value));
}

std::vector<ScaleShape> parse_scales(std::string_view key, std::string_view value) {
  std::vector<ScaleShape> out;
  while (!value.empty()) {
    const auto comma = value.find(',');
    const auto item = trim(value.substr(0, comma));
    try {
      out.push_back(parse_scale_shape(std::string(item)));
    } catch (const Error& e) {
      throw InvalidConfig(fmt::format("{}: {}", key, e.what()));
    }
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InvalidConfig(fmt::format("{}: at least one scale is required", key));
  return out;
}

std::string scales_to_string(const std::vector<ScaleShape>& scales) {
  std::string out;
  for (std::size_t i = 0; i < scales.size(); ++i) out += (i ? "," : "") + to_string(scales[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field integer_field(std::string key, T ExperimentConfig::*member) {
  return {key, [key, member](ExperimentConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) { return fmt::format("{}", c.*member); }};
}

#define SD_FIELD(KEY, EXPR, PARSE)                                                   \
  Field {                                                                            \
    KEY, [](ExperimentConfig& c, std::string_view v) { EXPR = PARSE(KEY, v); },      \
        [](const ExperimentConfig& c) { return fmt::format("{}", EXPR); }            \
  }

template <typename T>
T parse_int(std::string_view key, std::string_view value) {
  return parse_number<T>(key, value);
}
auto parse_u64 = parse_int<std::uint64_t>;
auto parse_size = parse_int<std::size_t>;
auto parse_step = parse_int<Step>;
auto parse_i32 = parse_int<int>;

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(SD_FIELD("seed", c.train.seed, parse_u64));
    t.push_back(SD_FIELD("image.width", c.train.model.image.width, parse_size));
    t.push_back(SD_FIELD("image.height", c.train.model.image.height, parse_size));
    t.push_back(SD_FIELD("classes", c.train.model.num_classes, parse_i32));
    t.push_back({"scales", [](ExperimentConfig& c, std::string_view v) { c.train.model.scales = parse_scales("scales", v); },
                 [](const ExperimentConfig& c) { return scales_to_string(c.train.model.scales); }});
    t.push_back(SD_FIELD("model.backbone_channels", c.train.model.backbone_channels, parse_size));
    t.push_back(SD_FIELD("model.head_hidden", c.train.model.head_hidden, parse_size));
    t.push_back(integer_field("dataset.train_count", &ExperimentConfig::train_count));
    t.push_back(integer_field("dataset.eval_count", &ExperimentConfig::eval_count));
    t.push_back(integer_field("dataset.min_objects", &ExperimentConfig::min_objects));
    t.push_back(integer_field("dataset.max_objects", &ExperimentConfig::max_objects));
    t.push_back(integer_field("dataset.min_object_size", &ExperimentConfig::min_object_size));
    t.push_back(integer_field("dataset.max_object_size", &ExperimentConfig::max_object_size));
    t.push_back({"loss",
                 [](ExperimentConfig& c, std::string_view v) {
                   try {
                     c.train.loss = parse_distill_loss(v);
                   } catch (const Error& e) {
                     throw InvalidConfig(fmt::format("loss: {}", e.what()));
                   }
                 },
                 [](const ExperimentConfig& c) { return std::string(to_string(c.train.loss)); }});
    t.push_back(SD_FIELD("distillation", c.train.distillation, parse_bool));
    t.push_back(SD_FIELD("temperature", c.train.temperature, parse_real));
    t.push_back(SD_FIELD("stop_teacher_gradient", c.train.stop_teacher_gradient, parse_bool));
    t.push_back(SD_FIELD("lr.base_rate", c.train.lr.base_rate, parse_real));
    t.push_back(SD_FIELD("lr.decay_start_step", c.train.lr.decay_start_step, parse_step));
    t.push_back(SD_FIELD("lr.decay_factor", c.train.lr.decay_factor, parse_real));
    t.push_back(SD_FIELD("lr.decay_interval", c.train.lr.decay_interval, parse_step));
    t.push_back(SD_FIELD("lr.end_step", c.train.lr.end_step, parse_step));
    t.push_back(SD_FIELD("lambda.warmup_end_step", c.train.lambda.warmup_end_step, parse_step));
    t.push_back(SD_FIELD("lambda.switch_step", c.train.lambda.switch_step, parse_step));
    t.push_back(SD_FIELD("lambda.lambda1", c.train.lambda.lambda1, parse_real));
    t.push_back(SD_FIELD("lambda.lambda2", c.train.lambda.lambda2, parse_real));
    t.push_back(SD_FIELD("phase.freeze_end_step", c.train.phase.freeze_end_step, parse_step));
    t.push_back(SD_FIELD("total_steps", c.train.phase.total_steps, parse_step));
    t.push_back(SD_FIELD("batch_size", c.train.batch_size, parse_size));
    t.push_back(SD_FIELD("eval_interval", c.train.eval_interval, parse_step));
    t.push_back(SD_FIELD("grad_clip", c.train.grad_clip, parse_real));
    t.push_back(SD_FIELD("score_threshold", c.train.decode.score_threshold, parse_real));
    t.push_back(SD_FIELD("nms_iou", c.train.decode.nms_iou, parse_real));
    t.push_back(SD_FIELD("max_detections", c.train.decode.max_detections, parse_size));
    t.push_back({"output_dir",
                 [](ExperimentConfig& c, std::string_view v) {
                   if (v.empty()) throw InvalidConfig("output_dir: must not be empty");
                   c.output_dir = std::string(v);
                 },
                 [](const ExperimentConfig& c) { return c.output_dir; }});
    return t;
  }();
  return table;
}

#undef SD_FIELD

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw InvalidConfig(fmt::format("unknown key '{}'", key));
}

bool variant_key(std::string_view key) {
  return key == "loss" || key == "distillation" || key.starts_with("lambda.");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Calls on_line(line_no, key, value) for each assignment, on_section(line_no,
// header) for each [..] line.
void scan(std::string_view text, std::string_view origin,
          const std::function<void(std::size_t, std::string_view, std::string_view)>& on_line,
          const std::function<void(std::size_t, std::string_view)>& on_section) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']' || !on_section) throw InvalidConfig(fmt::format("unexpected section '{}'", line));
        on_section(line_no, trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw InvalidConfig(fmt::format("expected 'key = value', got '{}'", line));
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw InvalidConfig("missing key");
      on_line(line_no, key, trim(line.substr(eq + 1)));
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
}

void validate_with_origin(const ExperimentConfig& c, std::string_view origin) {
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(fmt::format("{}: {}", origin, e.what()));
  }
}

}  // namespace

DatasetParams ExperimentConfig::train_dataset() const {
  DatasetParams p;
  p.count = train_count;
  p.image_size = train.model.image;
  p.num_classes = train.model.num_classes;
  p.min_objects = min_objects;
  p.max_objects = max_objects;
  p.min_object_size = min_object_size;
  p.max_object_size = max_object_size;
  return p;
}

DatasetParams ExperimentConfig::eval_dataset() const {
  DatasetParams p = train_dataset();
  p.count = eval_count;
  return p;
}

std::uint64_t ExperimentConfig::train_dataset_seed() const { return Rng::derive(train.seed, kTrainDataStream); }
std::uint64_t ExperimentConfig::eval_dataset_seed() const { return Rng::derive(train.seed, kEvalDataStream); }

void ExperimentConfig::validate() const {
  train.validate();
  train_dataset().validate();
  eval_dataset().validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  field(key).set(config, value);
}

std::string get_config_value(const ExperimentConfig& config, std::string_view key) { return field(key).get(config); }

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw InvalidConfig(fmt::format("override '{}' is not KEY=VALUE", assignment));
  set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  scan(
      text, origin,
      [&](std::size_t, std::string_view key, std::string_view value) {
        if (!seen.emplace(key).second) throw InvalidConfig(fmt::format("key '{}' set twice", key));
        set_config_value(config, key, value);
      },
      {});
  validate_with_origin(config, origin);
  return config;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(config));
  return out;
}

CompareSpec parse_compare_spec(std::string_view text, std::string_view origin, const std::string& base_dir) {
  CompareSpec spec;
  bool have_include = false;
  bool base_keys = false;
  bool have_seeds = false;
  std::set<std::string, std::less<>> names;

  scan(
      text, origin,
      [&](std::size_t, std::string_view key, std::string_view value) {
        if (!spec.variants.empty()) {
          if (!variant_key(key)) {
            throw InvalidConfig(fmt::format("variants may only set loss, distillation and lambda.*; got '{}'", key));
          }
          set_config_value(spec.variants.back().config, key, value);
          return;
        }
        if (key == "include") {
          if (have_include || base_keys) throw InvalidConfig("include must come first and only once");
          std::filesystem::path p{std::string(value)};
          if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
          spec.base = load_config(p.string());
          have_include = true;
        } else if (key == "seeds") {
          if (have_seeds) throw InvalidConfig("seeds set twice");
          std::set<std::uint64_t> unique;
          std::string_view rest = value;
          while (true) {
            const auto comma = rest.find(',');
            const auto seed = parse_number<std::uint64_t>("seeds", trim(rest.substr(0, comma)));
            if (!unique.insert(seed).second) throw InvalidConfig(fmt::format("seeds: {} repeated", seed));
            spec.seeds.push_back(seed);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
          }
          have_seeds = true;
        } else {
          set_config_value(spec.base, key, value);
          base_keys = true;
        }
      },
      [&](std::size_t, std::string_view header) {
        constexpr std::string_view prefix = "variant ";
        if (!header.starts_with(prefix)) throw InvalidConfig(fmt::format("unknown section '{}'", header));
        const auto name = trim(header.substr(prefix.size()));
        const bool ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char ch) {
          return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.';
        });
        if (!ok) throw InvalidConfig(fmt::format("bad variant name '{}'", name));
        if (!names.emplace(name).second) throw InvalidConfig(fmt::format("variant '{}' defined twice", name));
        spec.variants.push_back({std::string(name), spec.base});
      });

  if (!have_seeds || spec.seeds.empty()) throw InvalidConfig(fmt::format("{}: seeds are required", origin));
  if (spec.variants.empty()) throw InvalidConfig(fmt::format("{}: at least one [variant NAME] is required", origin));
  validate_with_origin(spec.base, origin);
  for (const auto& v : spec.variants) validate_with_origin(v.config, fmt::format("{} [variant {}]", origin, v.name));
  return spec;
}

CompareSpec load_compare_spec(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_compare_spec(read_file(path), path, dir.empty() ? "." : dir.string());
}

}  // namespace selfdistill
