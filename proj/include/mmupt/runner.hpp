#pragma once

// The unsupervised post-training loop: sample a group per prompt, extract
// answers, vote, reward agreement with the vote, normalize within the group,
// take a clipped-surrogate AdamW step, refresh θ_old.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "grpo.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "seq_policy.hpp"
#include "tasks.hpp"
#include "voting.hpp"

namespace mmupt {

inline std::unique_ptr<Policy> make_policy(PolicyKind kind, const TaskSet& tasks) {
  if (kind == PolicyKind::seq) return std::make_unique<SeqPolicy>(tasks);
  return std::make_unique<BanditPolicy>(tasks);
}

struct MetricRecord {
  std::uint64_t step = 0;
  std::uint64_t episode = 0;
  double mean_majority_reward = 0.0;
  std::optional<double> mean_entropy;     // absent when every group was degenerate
  std::optional<double> greedy_accuracy;  // only on evaluation steps
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  double grad_norm = 0.0;
  double objective = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["episode"] = r.episode;
  j["mean_majority_reward"] = r.mean_majority_reward;
  j["mean_entropy"] = r.mean_entropy ? nlohmann::json(*r.mean_entropy) : nlohmann::json(nullptr);
  j["greedy_accuracy"] = r.greedy_accuracy ? nlohmann::json(*r.greedy_accuracy) : nlohmann::json(nullptr);
  j["clip_fraction"] = r.clip_fraction;
  j["mean_kl"] = r.mean_kl;
  j["grad_norm"] = r.grad_norm;
  j["objective"] = r.objective;
  j["wall_ms"] = r.wall_ms;
  return j;
}

inline MetricRecord metric_from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.episode = j.at("episode").get<std::uint64_t>();
  r.mean_majority_reward = j.at("mean_majority_reward").get<double>();
  if (!j.at("mean_entropy").is_null()) r.mean_entropy = j.at("mean_entropy").get<double>();
  if (!j.at("greedy_accuracy").is_null()) r.greedy_accuracy = j.at("greedy_accuracy").get<double>();
  r.clip_fraction = j.at("clip_fraction").get<double>();
  r.mean_kl = j.at("mean_kl").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.objective = j.at("objective").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

/// Train / evaluation split by id hash. With holdout 0 both are the full set.
struct TaskSplit {
  TaskSet train;
  TaskSet eval;
};

inline bool is_held_out(const Task& task, double fraction) {
  if (fraction <= 0.0) return false;
  return static_cast<double>(mix64(hash_string(task.id())) % 10000) < fraction * 10000.0;
}

inline TaskSplit split_tasks(const TaskSet& tasks, double holdout_fraction) {
  TaskSplit s;
  s.train.seed = s.eval.seed = tasks.seed;
  if (holdout_fraction <= 0.0) {
    s.train = tasks;
    s.eval = tasks;
    return s;
  }
  for (const auto& t : tasks.tasks) (is_held_out(t, holdout_fraction) ? s.eval : s.train).tasks.push_back(t);
  if (s.eval.empty()) s.eval = s.train;
  return s;
}

class TrainAborted : public std::runtime_error {
 public:
  TrainAborted(const std::string& what, PolicyParams last_valid, std::uint64_t step)
      : std::runtime_error(what), last_valid_(std::move(last_valid)), step_(step) {}
  const PolicyParams& last_valid() const noexcept { return last_valid_; }
  std::uint64_t step() const noexcept { return step_; }

 private:
  PolicyParams last_valid_;
  std::uint64_t step_;
};

struct TrainOptions {
  /// Run directory: config.resolved, metrics.log, checkpoints/ep<k>.ckpt.
  /// Empty: nothing is written.
  std::filesystem::path out_dir;
  /// 0: take UPT_WORKERS from the environment.
  std::size_t workers = 0;
  /// Called after every step with the updated parameters.
  std::function<void(std::uint64_t step, const PolicyParams&)> on_step;
};

struct TrainResult {
  PolicyParams params;
  std::vector<MetricRecord> metrics;
  std::uint64_t steps = 0;
};

namespace detail {

/// Sampling through rewards for one step's batch. Reads labels only when
/// reward_mode is ground_truth.
inline std::vector<RewardedGroup> rollout(const Policy& policy, const PolicyParams& theta,
                                          std::span<const Task* const> batch, const TrainConfig& cfg,
                                          std::uint64_t step, std::size_t workers) {
  const std::size_t g = cfg.group_size;
  std::vector<RewardedGroup> groups(batch.size());
  for (auto& grp : groups) grp.responses.resize(g);
  parallel_for(batch.size() * g, workers, [&](std::size_t k) {
    const std::size_t j = k / g;
    const std::size_t i = k % g;
    groups[j].responses[i] = sample_response(policy, theta, *batch[j], cfg.temperature, cfg.seed, step, i);
  });
  for (std::size_t j = 0; j < batch.size(); ++j) {
    RewardedGroup& grp = groups[j];
    grp.answers.reserve(g);
    for (const auto& r : grp.responses) grp.answers.push_back(extract(r.text));
    grp.vote = majority_vote(grp.answers);
    grp.rewards = cfg.reward_mode == RewardMode::majority
                      ? pseudo_rewards(grp.answers, grp.vote)
                      : supervised_rewards(grp.answers, TruthAccess::truth(*batch[j]));
    grp.stats = normalize_advantages(grp.rewards, cfg.std_mode);
  }
  return groups;
}

inline std::string checkpoint_name(std::uint64_t episode) { return "ep" + std::to_string(episode) + ".ckpt"; }

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const TaskSet& tasks, const PolicyParams& initial,
                         const TrainOptions& options = {}) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("train: empty task set");
  const auto policy = make_policy(cfg.policy_kind, tasks);
  if (initial.dim() != policy->dim()) throw std::invalid_argument("train: initial parameters do not fit the policy");
  if (!initial.all_finite()) throw std::invalid_argument("train: non-finite initial parameters");
  const std::size_t workers = options.workers > 0 ? options.workers : worker_count_from_env();
  const TaskSplit split = split_tasks(tasks, cfg.holdout_fraction);
  if (split.train.empty()) throw std::invalid_argument("train: no training tasks after holdout split");

  std::ofstream metrics_log;
  std::filesystem::path ckpt_dir;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    ckpt_dir = options.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    std::ofstream resolved(options.out_dir / "config.resolved");
    write_config(resolved, cfg);
    metrics_log.open(options.out_dir / "metrics.log", std::ios::trunc);
    if (!metrics_log) throw std::runtime_error("cannot write metrics.log in " + options.out_dir.string());
  }

  const PolicyParams reference = initial;
  PolicyParams theta = initial;
  AdamState adam;
  const OptimizerConfig opt = cfg.optimizer();
  const SurrogateOptions sur = cfg.surrogate_options();
  const std::size_t steps_per_episode =
      (split.train.size() + cfg.batch_tasks_per_step - 1) / cfg.batch_tasks_per_step;
  const std::uint64_t total_steps = steps_per_episode * cfg.episodes;

  TrainResult result;
  std::uint64_t step = 0;
  for (std::uint64_t episode = 1; episode <= cfg.episodes; ++episode) {
    std::vector<const Task*> order;
    for (const auto& t : split.train.tasks) order.push_back(&t);
    CounterRng shuffle_rng(stream_key({cfg.seed, 0x5eedULL, episode}));
    shuffle(std::span<const Task*>(order), shuffle_rng);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_tasks_per_step) {
      const auto started = std::chrono::steady_clock::now();
      ++step;
      const std::span<const Task* const> batch(order.data() + begin,
                                               std::min(cfg.batch_tasks_per_step, order.size() - begin));
      // θ_old ← θ: every response's old_logprobs come from the current θ.
      const auto groups = detail::rollout(*policy, theta, batch, cfg, step, workers);

      MetricRecord rec;
      rec.step = step;
      rec.episode = episode;
      rec.mean_majority_reward = mean_majority_reward(groups);
      double entropy_sum = 0.0;
      std::size_t entropy_n = 0;
      for (const auto& grp : groups) {
        const auto h = semantic_entropy(grp.answers);
        if (h.degenerate) continue;
        entropy_sum += h.entropy;
        ++entropy_n;
      }
      if (entropy_n > 0) rec.mean_entropy = entropy_sum / static_cast<double>(entropy_n);

      for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        std::vector<double> grad(policy->dim(), 0.0);
        double objective = 0.0;
        double kl_weighted = 0.0;
        std::size_t tokens = 0;
        std::size_t clipped = 0;
        std::size_t used = 0;
        for (std::size_t j = 0; j < groups.size(); ++j) {
          const auto& grp = groups[j];
          if (cfg.skip_zero_variance && grp.stats.std == 0.0) continue;
          const auto res = surrogate(*policy, *batch[j], grp.responses, grp.stats, theta, reference, sur, workers);
          for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += res.gradient[k];
          objective += res.objective;
          kl_weighted += res.mean_kl * static_cast<double>(res.total_tokens);
          tokens += res.total_tokens;
          clipped += res.clipped_tokens;
          ++used;
        }
        if (used == 0) break;
        for (double& v : grad) v /= static_cast<double>(used);
        rec.objective = objective / static_cast<double>(used);
        rec.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
        rec.mean_kl = tokens ? kl_weighted / static_cast<double>(tokens) : 0.0;
        try {
          auto stepped = optimizer_step(theta, grad, adam, opt);
          if (!stepped.params.all_finite()) throw NonFiniteGradient("update produced non-finite parameters");
          rec.grad_norm = stepped.grad_norm;
          theta = std::move(stepped.params);
        } catch (const NonFiniteGradient& e) {
          throw TrainAborted(std::string("training aborted at step ") + std::to_string(step) + ": " + e.what(),
                             theta, step);
        }
      }

      if (step % cfg.eval_every == 0 || step == total_steps)
        rec.greedy_accuracy = accuracy(*policy, theta, split.eval, AccuracyMode::greedy(), workers);
      if (cfg.log_wall_time)
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
      if (metrics_log.is_open()) metrics_log << to_json(rec).dump() << '\n' << std::flush;
      result.metrics.push_back(rec);
      if (options.on_step) options.on_step(step, theta);
    }
    if (!ckpt_dir.empty()) write_checkpoint((ckpt_dir / detail::checkpoint_name(episode)).string(), cfg.policy_kind, theta);
  }
  result.params = std::move(theta);
  result.steps = step;
  return result;
}

/// Accuracy plus a per-task report; writes the report as JSON lines when a
/// path is given.
inline AccuracyReport evaluate(const Policy& policy, const PolicyParams& params, const TaskSet& tasks,
                               const AccuracyMode& mode, const std::filesystem::path& report_path = {},
                               std::size_t workers = 0) {
  auto report = evaluate_accuracy(policy, params, tasks, mode, workers > 0 ? workers : worker_count_from_env());
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + report_path.string());
    out << nlohmann::json{{"mode", mode.name()}, {"accuracy", report.accuracy}, {"tasks", tasks.size()}}.dump()
        << '\n';
    for (const auto& s : report.per_task) {
      nlohmann::json row{{"id", s.id}, {"score", s.score}};
      if (mode.kind == AccuracyMode::Kind::greedy) row["prediction"] = s.prediction;
      out << row.dump() << '\n';
    }
  }
  return report;
}

}  // namespace mmupt
