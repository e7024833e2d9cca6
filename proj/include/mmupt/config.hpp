#pragma once

// Training configuration and its flat `key = value` file form.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "answer.hpp"
#include "grpo.hpp"
#include "policy.hpp"

namespace mmupt {

enum class RewardMode { majority, ground_truth };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.01;
  double learning_rate = 1e-6;
  double weight_decay = 1e-2;
  double grad_clip_norm = 1.0;
  std::size_t episodes = 15;
  std::size_t batch_tasks_per_step = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  RewardMode reward_mode = RewardMode::majority;
  PolicyKind policy_kind = PolicyKind::bandit;
  StdMode std_mode = StdMode::population;
  std::size_t inner_epochs = 1;
  bool skip_zero_variance = false;
  std::size_t eval_every = 50;
  /// Fraction of tasks (by id hash) held out for evaluation; 0 trains and
  /// evaluates on every task.
  double holdout_fraction = 0.2;
  /// Off for byte-comparable metric logs.
  bool log_wall_time = true;

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    if (group_size < 2) fail("group_size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("clip_eps must lie in (0, 1)");
    if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) fail("kl_beta must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
    if (!(grad_clip_norm > 0.0) || !std::isfinite(grad_clip_norm)) fail("grad_clip_norm must be > 0");
    if (episodes < 1) fail("episodes must be >= 1");
    if (batch_tasks_per_step < 1) fail("batch_tasks_per_step must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be > 0");
    if (inner_epochs < 1) fail("inner_epochs must be >= 1");
    if (eval_every < 1) fail("eval_every must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in [0, 1)");
  }

  OptimizerConfig optimizer() const { return {learning_rate, weight_decay, grad_clip_norm}; }
  SurrogateOptions surrogate_options() const { return {clip_eps, kl_beta}; }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    throw ConfigError("config key " + std::string(key) + ": expected a nonnegative integer, got '" + std::string(value) + "'");
  return out;
}

inline double parse_real(std::string_view key, std::string_view value) {
  const std::string s(value);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw ConfigError("config key " + std::string(key) + ": expected a real number, got '" + s + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key " + std::string(key) + ": expected true/false");
}

}  // namespace detail

inline void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  using namespace detail;
  if (key == "group_size") c.group_size = parse_unsigned<std::size_t>(key, value);
  else if (key == "clip_eps") c.clip_eps = parse_real(key, value);
  else if (key == "kl_beta") c.kl_beta = parse_real(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_real(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_real(key, value);
  else if (key == "grad_clip_norm") c.grad_clip_norm = parse_real(key, value);
  else if (key == "episodes") c.episodes = parse_unsigned<std::size_t>(key, value);
  else if (key == "batch_tasks_per_step") c.batch_tasks_per_step = parse_unsigned<std::size_t>(key, value);
  else if (key == "temperature") c.temperature = parse_real(key, value);
  else if (key == "seed") c.seed = parse_unsigned<std::uint64_t>(key, value);
  else if (key == "reward_mode") {
    if (value == "majority") c.reward_mode = RewardMode::majority;
    else if (value == "ground_truth") c.reward_mode = RewardMode::ground_truth;
    else throw ConfigError("reward_mode must be majority or ground_truth");
  } else if (key == "policy_kind") {
    if (value == "bandit") c.policy_kind = PolicyKind::bandit;
    else if (value == "seq") c.policy_kind = PolicyKind::seq;
    else throw ConfigError("policy_kind must be bandit or seq");
  } else if (key == "std_mode") {
    if (value == "population") c.std_mode = StdMode::population;
    else if (value == "sample") c.std_mode = StdMode::sample;
    else throw ConfigError("std_mode must be population or sample");
  } else if (key == "inner_epochs") c.inner_epochs = parse_unsigned<std::size_t>(key, value);
  else if (key == "skip_zero_variance") c.skip_zero_variance = parse_bool(key, value);
  else if (key == "eval_every") c.eval_every = parse_unsigned<std::size_t>(key, value);
  else if (key == "holdout_fraction") c.holdout_fraction = parse_real(key, value);
  else if (key == "log_wall_time") c.log_wall_time = parse_bool(key, value);
  else throw ConfigError("unknown config key: " + std::string(key));
}

/// Blank lines and '#' comments are ignored; unknown keys are errors.
inline TrainConfig parse_config(std::istream& in) {
  TrainConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return parse_config(in);
}

/// Every key, defaults filled; parse_config(write_config(c)) == c.
inline void write_config(std::ostream& out, const TrainConfig& c) {
  using detail::format_double;
  out << "group_size = " << c.group_size << '\n'
      << "clip_eps = " << format_double(c.clip_eps) << '\n'
      << "kl_beta = " << format_double(c.kl_beta) << '\n'
      << "learning_rate = " << format_double(c.learning_rate) << '\n'
      << "weight_decay = " << format_double(c.weight_decay) << '\n'
      << "grad_clip_norm = " << format_double(c.grad_clip_norm) << '\n'
      << "episodes = " << c.episodes << '\n'
      << "batch_tasks_per_step = " << c.batch_tasks_per_step << '\n'
      << "temperature = " << format_double(c.temperature) << '\n'
      << "seed = " << c.seed << '\n'
      << "reward_mode = " << (c.reward_mode == RewardMode::majority ? "majority" : "ground_truth") << '\n'
      << "policy_kind = " << to_string(c.policy_kind) << '\n'
      << "std_mode = " << (c.std_mode == StdMode::population ? "population" : "sample") << '\n'
      << "inner_epochs = " << c.inner_epochs << '\n'
      << "skip_zero_variance = " << (c.skip_zero_variance ? "true" : "false") << '\n'
      << "eval_every = " << c.eval_every << '\n'
      << "holdout_fraction = " << format_double(c.holdout_fraction) << '\n'
      << "log_wall_time = " << (c.log_wall_time ? "true" : "false") << '\n';
}

}  // namespace mmupt
