#pragma once

// Label-free diagnostics, evaluation accuracy and the binomial model of
// majority-vote correctness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "answer.hpp"
#include "grpo.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "tasks.hpp"
#include "voting.hpp"

namespace mmupt {

// --- semantic entropy -------------------------------------------------------

struct EntropyReport {
  std::vector<std::size_t> cluster_sizes;
  std::vector<double> probabilities;
  double entropy = 0.0;  // nats
  std::size_t voters = 0;
  /// No extractable answer in the group; entropy is meaningless, not 0.
  bool degenerate = false;
};

/// Clusters are answer-equivalence classes over extractable answers;
/// p(c_j) = |c_j| / voters, H = -Σ p ln p.
inline EntropyReport semantic_entropy(std::span<const ExtractedAnswer> answers) {
  if (answers.empty()) throw std::invalid_argument("semantic_entropy: empty group");
  const VoteResult vote = majority_vote(answers);
  EntropyReport r;
  r.voters = vote.voters;
  if (vote.voters == 0) {
    r.degenerate = true;
    return r;
  }
  for (const auto& [answer, n] : vote.counts) {
    r.cluster_sizes.push_back(n);
    const double p = static_cast<double>(n) / static_cast<double>(vote.voters);
    r.probabilities.push_back(p);
    r.entropy -= p * std::log(p);
  }
  r.entropy = std::max(0.0, r.entropy);
  return r;
}

// --- binomial majority analysis ---------------------------------------------

struct BinomialVoteModel {
  std::uint64_t n = 1;
  double p = 0.5;
};

enum class MajorityRule {
  strict,     // X > n/2, i.e. i from floor(n/2) + 1
  inclusive,  // i from ceil(n/2); counts exact ties for even n
};

inline constexpr std::uint64_t kExactBinomialLimit = 64;

namespace detail {

inline void check_model(const BinomialVoteModel& m) {
  if (m.n < 1) throw std::invalid_argument("binomial model: n must be >= 1");
  if (!(m.p > 0.0 && m.p < 1.0)) throw std::invalid_argument("binomial model: p must lie in (0, 1)");
}

inline std::uint64_t lower_index(const BinomialVoteModel& m, MajorityRule rule) {
  return rule == MajorityRule::strict ? m.n / 2 + 1 : (m.n + 1) / 2;
}

// A double is a dyadic rational; recover it exactly.
inline Rational exact_rational(double x) {
  int exp = 0;
  const double mant = std::frexp(x, &exp);
  const auto scaled = static_cast<std::int64_t>(std::ldexp(mant, 53));
  const int shift = 53 - exp;
  boost::multiprecision::cpp_int pow2 = 1;
  pow2 <<= std::abs(shift);
  if (shift >= 0) return Rational(boost::multiprecision::cpp_int(scaled), pow2);
  return Rational(boost::multiprecision::cpp_int(scaled) * pow2);
}

inline double to_double(const Rational& q) { return q.convert_to<double>(); }

inline double log_choose(std::uint64_t n, std::uint64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

inline Rational rational_pow(Rational base, std::uint64_t e) {
  Rational out = 1;
  while (e > 0) {
    if (e & 1) out *= base;
    base *= base;
    e >>= 1;
  }
  return out;
}

// Exact C(n,i) p^i (1-p)^(n-i) for i in [lower, n], p taken at its exact binary value.
inline std::vector<std::pair<std::uint64_t, Rational>> exact_terms(const BinomialVoteModel& m, std::uint64_t lower) {
  const Rational p = exact_rational(m.p);
  const Rational q = Rational(1) - p;
  std::vector<std::pair<std::uint64_t, Rational>> terms;
  boost::multiprecision::cpp_int c = 1;  // C(n, i), updated incrementally
  for (std::uint64_t i = 0; i <= m.n; ++i) {
    if (i > 0) c = c * (m.n - i + 1) / i;
    if (i < lower) continue;
    terms.emplace_back(i, Rational(c) * rational_pow(p, i) * rational_pow(q, m.n - i));
  }
  return terms;
}

inline std::vector<std::pair<std::uint64_t, double>> log_space_terms(const BinomialVoteModel& m, std::uint64_t lower) {
  const double lp = std::log(m.p);
  const double lq = std::log1p(-m.p);
  std::vector<std::pair<std::uint64_t, double>> terms;
  for (std::uint64_t i = lower; i <= m.n; ++i)
    terms.emplace_back(i, log_choose(m.n, i) + static_cast<double>(i) * lp + static_cast<double>(m.n - i) * lq);
  return terms;
}

}  // namespace detail

/// C(n,i) p^i (1-p)^(n-i) for each i from the rule's lower index to n. Exact
/// rational arithmetic up to n = 64, log-space beyond.
inline std::vector<std::pair<std::uint64_t, double>> majority_terms(const BinomialVoteModel& m,
                                                                    MajorityRule rule = MajorityRule::strict) {
  detail::check_model(m);
  const std::uint64_t lower = detail::lower_index(m, rule);
  std::vector<std::pair<std::uint64_t, double>> terms;
  if (m.n <= kExactBinomialLimit) {
    for (const auto& [i, t] : detail::exact_terms(m, lower)) terms.emplace_back(i, detail::to_double(t));
    return terms;
  }
  for (const auto& [i, l] : detail::log_space_terms(m, lower)) terms.emplace_back(i, std::exp(l));
  return terms;
}

/// P(majority of n independent samples is correct) under Binomial(n, p).
inline double majority_success_prob(const BinomialVoteModel& m, MajorityRule rule = MajorityRule::strict) {
  detail::check_model(m);
  const std::uint64_t lower = detail::lower_index(m, rule);
  if (m.n <= kExactBinomialLimit) {
    Rational total = 0;
    for (const auto& [i, t] : detail::exact_terms(m, lower)) total += t;
    return detail::to_double(total);
  }
  const auto logs = detail::log_space_terms(m, lower);
  if (logs.empty()) return 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& [i, l] : logs) mx = std::max(mx, l);
  double sum = 0.0;
  for (const auto& [i, l] : logs) sum += std::exp(l - mx);
  return std::min(1.0, std::exp(mx + std::log(sum)));
}

// --- reward and accuracy ----------------------------------------------------

/// Mean majority-vote reward over every response of every group. Computed from
/// each group's vote, so it is the same label-free quantity in supervised runs.
inline double mean_majority_reward(std::span<const RewardedGroup> groups) {
  if (groups.empty()) throw std::invalid_argument("mean_majority_reward: no groups");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups) {
    for (double r : pseudo_rewards(g.answers, g.vote)) sum += r;
    count += g.answers.size();
  }
  if (count == 0) throw std::invalid_argument("mean_majority_reward: no responses");
  return sum / static_cast<double>(count);
}

struct AccuracyMode {
  enum class Kind { greedy, sampled, expected };
  Kind kind = Kind::greedy;
  std::size_t samples = 0;  // for sampled
  std::uint64_t seed = 0;   // for sampled

  static AccuracyMode greedy() { return {}; }
  static AccuracyMode sampled(std::size_t k, std::uint64_t seed = 0) { return {Kind::sampled, k, seed}; }
  /// The k → ∞ limit of sampled: exact probability that a temperature-1
  /// sample is correct.
  static AccuracyMode expected() { return {Kind::expected, 0, 0}; }

  std::string name() const {
    switch (kind) {
      case Kind::sampled: return "sampled(" + std::to_string(samples) + ")";
      case Kind::expected: return "expected";
      case Kind::greedy: break;
    }
    return "greedy";
  }
};

struct TaskScore {
  std::string id;
  double score = 0.0;
  std::string prediction;  // greedy mode only
};

struct AccuracyReport {
  double accuracy = 0.0;
  std::vector<TaskScore> per_task;
};

/// Evaluation only: reads task labels through TruthAccess.
inline AccuracyReport evaluate_accuracy(const Policy& policy, const PolicyParams& params, const TaskSet& tasks,
                                        const AccuracyMode& mode, std::size_t workers = 1) {
  if (tasks.empty()) throw std::invalid_argument("accuracy: empty task set");
  if (mode.kind == AccuracyMode::Kind::sampled && mode.samples == 0)
    throw std::invalid_argument("accuracy: sampled mode needs k >= 1");
  AccuracyReport report;
  report.per_task.resize(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const Task& task = tasks.tasks[i];
    const ExtractedAnswer& truth = TruthAccess::truth(task);
    TaskScore& s = report.per_task[i];
    s.id = task.id();
    switch (mode.kind) {
      case AccuracyMode::Kind::greedy: {
        const auto tokens = policy.greedy(params, task);
        const ExtractedAnswer a = extract(policy.render(task, tokens));
        s.prediction = a.canonical;
        s.score = equivalent(a, truth) ? 1.0 : 0.0;
        break;
      }
      case AccuracyMode::Kind::sampled: {
        std::size_t hits = 0;
        for (std::size_t j = 0; j < mode.samples; ++j) {
          auto rng = CounterRng(stream_key({mode.seed, 0xe7a1ULL, hash_string(task.id()), j}));
          const Response r = policy.sample(params, task, 1.0, rng);
          if (equivalent(extract(r.text), truth)) ++hits;
        }
        s.score = static_cast<double>(hits) / static_cast<double>(mode.samples);
        break;
      }
      case AccuracyMode::Kind::expected: {
        const auto dist = policy.answer_distribution(params, task);
        for (std::size_t j = 0; j < dist.size(); ++j) {
          if (equivalent(task.answer_space()[j], truth)) s.score += dist[j];
        }
        break;
      }
    }
  });
  double sum = 0.0;
  for (const auto& s : report.per_task) sum += s.score;
  report.accuracy = sum / static_cast<double>(tasks.size());
  return report;
}

inline double accuracy(const Policy& policy, const PolicyParams& params, const TaskSet& tasks,
                       const AccuracyMode& mode, std::size_t workers = 1) {
  return evaluate_accuracy(policy, params, tasks, mode, workers).accuracy;
}

}  // namespace mmupt
