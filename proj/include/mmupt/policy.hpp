#pragma once

// Policy abstraction shared by the current, sampling-time and reference
// policies. A policy object is stateless; parameters live in PolicyParams
// snapshots, so one policy can score against θ, θ_old and the reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rng.hpp"
#include "tasks.hpp"

namespace mmupt {

enum class PolicyKind : std::uint8_t { bandit = 0, seq = 1 };

inline std::string_view to_string(PolicyKind k) { return k == PolicyKind::bandit ? "bandit" : "seq"; }

struct PolicyParams {
  std::vector<double> values;

  PolicyParams() = default;
  explicit PolicyParams(std::size_t dim, double fill = 0.0) : values(dim, fill) {}
  explicit PolicyParams(std::vector<double> v) : values(std::move(v)) {}

  std::size_t dim() const noexcept { return values.size(); }
  bool all_finite() const noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// One sampled sequence. `old_logprobs` are log π_old of each token at
/// temperature 1 and serve as the ratio denominators.
struct Response {
  std::vector<int> tokens;
  std::vector<double> old_logprobs;
  std::string text;
};

/// Sparse gradient of one token's log-probability.
struct SparseGrad {
  std::vector<std::size_t> index;
  std::vector<double> value;

  void add_to(std::span<double> out, double scale) const {
    for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] += scale * value[k];
  }
};

struct TokenScores {
  std::vector<double> logprobs;
  std::vector<SparseGrad> grads;  // empty unless requested
};

class PolicyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// How the 1 - p mass not on the correct answer is spread over wrong answers.
struct WrongMass {
  enum class Mode { uniform, designated };
  Mode mode = Mode::uniform;
  /// Mass on the designated wrong answer (the first wrong answer in answer-space order).
  double designated = 0.0;

  static WrongMass uniform() { return {}; }
  static WrongMass concentrated(double mass) { return {Mode::designated, mass}; }
};

/// Target answer distribution over `task.answer_space()` for a given accuracy.
inline std::vector<double> target_answer_probs(const Task& task, double p, const WrongMass& wrong) {
  if (!(p > 0.0 && p < 1.0)) throw PolicyError("accuracy p must lie in (0, 1)");
  const auto& space = task.answer_space();
  if (space.size() < 2) throw PolicyError("task " + task.id() + ": answer space needs at least 2 answers");
  const auto& truth = TruthAccess::truth(task);
  std::size_t correct = space.size();
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (equivalent(space[i], truth)) correct = i;
  }
  if (correct == space.size()) throw PolicyError("task " + task.id() + ": truth not in answer space");
  const std::size_t wrong_count = space.size() - 1;
  std::vector<double> probs(space.size(), 0.0);
  probs[correct] = p;
  if (wrong.mode == WrongMass::Mode::uniform) {
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (i != correct) probs[i] = (1.0 - p) / static_cast<double>(wrong_count);
    }
    return probs;
  }
  const double d = wrong.designated;
  const double rest = 1.0 - p - d;
  constexpr double slack = 1e-12;
  if (!(d > 0.0) || rest < -slack) throw PolicyError("designated wrong mass incompatible with p");
  if (wrong_count == 1 && std::abs(rest) > slack)
    throw PolicyError("two-answer task: designated wrong mass must equal 1 - p");
  if (wrong_count > 1 && !(rest > slack))
    throw PolicyError("designated wrong mass leaves nothing for the remaining wrong answers");
  bool first = true;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (i == correct) continue;
    probs[i] = first ? d : rest / static_cast<double>(wrong_count - 1);
    first = false;
  }
  return probs;
}

using TokenMask = std::vector<std::uint8_t>;

/// Softmax of logits/temperature over the allowed entries; disallowed get 0.
inline std::vector<double> masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> allowed,
                                          double temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) mx = std::max(mx, logits[i] / temperature);
  }
  std::vector<double> probs(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!allowed[i]) continue;
    probs[i] = std::exp(logits[i] / temperature - mx);
    z += probs[i];
  }
  for (double& v : probs) v /= z;
  return probs;
}

/// log softmax at temperature 1 of entry `k` over the allowed entries.
inline double masked_log_softmax(std::span<const double> logits, std::span<const std::uint8_t> allowed,
                                 std::size_t k) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) z += std::exp(logits[i] - mx);
  }
  return std::min(0.0, logits[k] - mx - std::log(z));
}

/// Maps task ids to dense indices for per-task parameter blocks.
class TaskIndex {
 public:
  TaskIndex() = default;
  explicit TaskIndex(const TaskSet& tasks) {
    for (const auto& t : tasks.tasks) {
      if (!index_.emplace(t.id(), answer_counts_.size()).second) throw PolicyError("duplicate task id " + t.id());
      answer_counts_.push_back(t.answer_space().size());
    }
  }

  std::size_t of(const Task& task) const {
    const auto it = index_.find(task.id());
    if (it == index_.end()) throw PolicyError("task " + task.id() + " is not covered by this policy");
    if (answer_counts_[it->second] != task.answer_space().size())
      throw PolicyError("task " + task.id() + ": answer space size differs from policy layout");
    return it->second;
  }
  std::size_t size() const noexcept { return answer_counts_.size(); }
  std::size_t answer_count(std::size_t i) const { return answer_counts_.at(i); }
  std::size_t max_answer_count() const noexcept {
    return answer_counts_.empty() ? 0 : *std::max_element(answer_counts_.begin(), answer_counts_.end());
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> answer_counts_;
};

/// π_θ as a sampleable, scoreable, differentiable object.
///
/// Contract: for a freshly sampled response, score(...).logprobs equals
/// response.old_logprobs (same params) to within 1e-12.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual PolicyKind kind() const noexcept = 0;
  virtual std::size_t dim() const noexcept = 0;
  virtual std::size_t vocab_size() const noexcept = 0;

  /// Next-token distribution after `prefix` at the given temperature (zeros on
  /// tokens the grammar forbids).
  virtual std::vector<double> next_token_probs(const PolicyParams& params, const Task& task,
                                               std::span<const int> prefix, double temperature) const = 0;

  virtual Response sample(const PolicyParams& params, const Task& task, double temperature,
                          CounterRng& rng) const = 0;

  /// Per-token log π_θ and, if requested, its gradient w.r.t. θ.
  virtual TokenScores score(const PolicyParams& params, const Task& task, std::span<const int> tokens,
                            bool with_grad) const = 0;

  /// Argmax decoding (ties to the lowest token id).
  virtual std::vector<int> greedy(const PolicyParams& params, const Task& task) const = 0;

  /// Marginal probability (temperature 1) of finishing with each answer of
  /// task.answer_space().
  virtual std::vector<double> answer_distribution(const PolicyParams& params, const Task& task) const = 0;

  virtual std::string render(const Task& task, std::span<const int> tokens) const = 0;

  /// Parameters whose marginal probability of the correct answer is exactly p
  /// on every task.
  virtual PolicyParams init_with_accuracy(const TaskSet& tasks, double p, const WrongMass& wrong) const = 0;

 protected:
  void check_params(const PolicyParams& params) const {
    if (params.dim() != dim()) throw PolicyError("parameter dimension mismatch");
    if (!params.all_finite()) throw PolicyError("non-finite policy parameters");
  }
};

inline TokenScores logprob_and_grad(const Policy& policy, const PolicyParams& params, const Task& task,
                                    std::span<const int> tokens) {
  return policy.score(params, task, tokens, true);
}

/// Per-response stream: independent of worker scheduling.
inline CounterRng response_stream(std::uint64_t seed, std::uint64_t step, const Task& task, std::size_t index) {
  return CounterRng(stream_key({seed, step, hash_string(task.id()), index}));
}

inline Response sample_response(const Policy& policy, const PolicyParams& params, const Task& task,
                                double temperature, std::uint64_t seed, std::uint64_t step, std::size_t index) {
  auto rng = response_stream(seed, step, task, index);
  return policy.sample(params, task, temperature, rng);
}

/// G independent responses; response i uses stream (seed, step, task, i).
inline std::vector<Response> sample_group(const Policy& policy, const PolicyParams& params, const Task& task,
                                          std::size_t group_size, double temperature, std::uint64_t seed,
                                          std::uint64_t step = 0) {
  if (group_size == 0) throw PolicyError("group size must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw PolicyError("temperature must be positive");
  if (!params.all_finite()) throw PolicyError("non-finite policy parameters");
  std::vector<Response> group;
  group.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i)
    group.push_back(sample_response(policy, params, task, temperature, seed, step, i));
  return group;
}

/// One logit per (task, answer); a response is a single answer token, which
/// is also its terminal token.
class BanditPolicy final : public Policy {
 public:
  explicit BanditPolicy(const TaskSet& tasks) : index_(tasks) {
    offsets_.reserve(index_.size());
    for (std::size_t i = 0; i < index_.size(); ++i) {
      offsets_.push_back(dim_);
      dim_ += index_.answer_count(i);
    }
  }

  PolicyKind kind() const noexcept override { return PolicyKind::bandit; }
  std::size_t dim() const noexcept override { return dim_; }
  std::size_t vocab_size() const noexcept override { return index_.max_answer_count(); }

  std::vector<double> next_token_probs(const PolicyParams& params, const Task& task, std::span<const int> prefix,
                                       double temperature) const override {
    check_params(params);
    if (!prefix.empty()) throw PolicyError("bandit responses are a single token");
    const auto [offset, n] = block(task);
    return softmax_block(params, offset, n, temperature);
  }

  Response sample(const PolicyParams& params, const Task& task, double temperature, CounterRng& rng) const override {
    check_params(params);
    const auto [offset, n] = block(task);
    const auto probs = softmax_block(params, offset, n, temperature);
    const int tok = static_cast<int>(sample_categorical(probs, rng));
    Response r;
    r.tokens = {tok};
    r.old_logprobs = {log_prob(params, offset, n, static_cast<std::size_t>(tok))};
    r.text = render(task, r.tokens);
    return r;
  }

  TokenScores score(const PolicyParams& params, const Task& task, std::span<const int> tokens,
                    bool with_grad) const override {
    check_params(params);
    const auto [offset, n] = block(task);
    if (tokens.size() != 1) throw PolicyError("bandit responses are a single token");
    if (tokens[0] < 0 || static_cast<std::size_t>(tokens[0]) >= n) throw PolicyError("token outside answer space");
    const auto tok = static_cast<std::size_t>(tokens[0]);
    TokenScores s;
    s.logprobs = {log_prob(params, offset, n, tok)};
    if (with_grad) {
      const auto probs = softmax_block(params, offset, n, 1.0);
      SparseGrad g;
      for (std::size_t j = 0; j < n; ++j) {
        g.index.push_back(offset + j);
        g.value.push_back((j == tok ? 1.0 : 0.0) - probs[j]);
      }
      s.grads.push_back(std::move(g));
    }
    return s;
  }

  std::vector<int> greedy(const PolicyParams& params, const Task& task) const override {
    check_params(params);
    const auto [offset, n] = block(task);
    const auto first = params.values.begin() + static_cast<std::ptrdiff_t>(offset);
    return {static_cast<int>(std::max_element(first, first + static_cast<std::ptrdiff_t>(n)) - first)};
  }

  std::vector<double> answer_distribution(const PolicyParams& params, const Task& task) const override {
    check_params(params);
    const auto [offset, n] = block(task);
    return softmax_block(params, offset, n, 1.0);
  }

  std::string render(const Task& task, std::span<const int> tokens) const override {
    if (tokens.size() != 1 || tokens[0] < 0 || static_cast<std::size_t>(tokens[0]) >= task.answer_space().size())
      throw PolicyError("token outside answer space");
    return "\\boxed{" + task.answer_space()[static_cast<std::size_t>(tokens[0])].canonical + "}";
  }

  PolicyParams init_with_accuracy(const TaskSet& tasks, double p, const WrongMass& wrong) const override {
    PolicyParams params(dim_);
    for (const auto& t : tasks.tasks) {
      const auto [offset, n] = block(t);
      const auto probs = target_answer_probs(t, p, wrong);
      for (std::size_t j = 0; j < n; ++j) params.values[offset + j] = std::log(probs[j]);
    }
    return params;
  }

 private:
  std::pair<std::size_t, std::size_t> block(const Task& task) const {
    const std::size_t i = index_.of(task);
    return {offsets_[i], index_.answer_count(i)};
  }

  std::vector<double> softmax_block(const PolicyParams& params, std::size_t offset, std::size_t n,
                                    double temperature) const {
    return masked_softmax(std::span<const double>(params.values.data() + offset, n), TokenMask(n, 1), temperature);
  }

  double log_prob(const PolicyParams& params, std::size_t offset, std::size_t n, std::size_t tok) const {
    return masked_log_softmax(std::span<const double>(params.values.data() + offset, n), TokenMask(n, 1), tok);
  }

  TaskIndex index_;
  std::vector<std::size_t> offsets_;
  std::size_t dim_ = 0;
};

}  // namespace mmupt
