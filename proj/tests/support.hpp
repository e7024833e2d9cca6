#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmupt/mmupt.hpp"

namespace mmupt::test {

inline ExtractedAnswer ans(std::string_view s) { return canonicalize(s); }

inline ExtractedAnswer none() { return {}; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmupt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// max_k |a_k - b_k| / max(max_k |a_k|, max_k |b_k|): the worst component
/// error measured against the gradient's overall scale.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

inline PolicyParams random_params(std::size_t dim, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  PolicyParams p(dim);
  for (auto& v : p.values) v = nd(gen);
  return p;
}

/// Hand-labelled vote alphabet: three answer classes, one rendered two ways,
/// plus an abstention. class_of is the oracle's notion of equivalence.
struct VoteSymbol {
  const char* text;
  int class_of;  // -1: abstains
};
inline constexpr VoteSymbol kVoteAlphabet[] = {{"1/2", 0}, {"0.5", 0}, {"B", 1}, {"x  y", 2}, {"", -1}};

struct OracleVote {
  int winner_class = -1;
  std::size_t multiplicity = 0;
  bool tie = false;
  std::size_t voters = 0;
};

/// Direct mode finder: count every class, take the max, break ties by the
/// earliest first appearance.
inline OracleVote oracle_vote(const std::vector<int>& classes) {
  OracleVote o;
  std::vector<std::size_t> count(3, 0);
  std::vector<std::size_t> first(3, classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0) continue;
    ++o.voters;
    ++count[static_cast<std::size_t>(c)];
    first[static_cast<std::size_t>(c)] = std::min(first[static_cast<std::size_t>(c)], i);
  }
  const std::size_t best = *std::max_element(count.begin(), count.end());
  if (best == 0) return o;
  o.multiplicity = best;
  std::size_t at = classes.size();
  std::size_t ties = 0;
  for (int c = 0; c < 3; ++c) {
    if (count[static_cast<std::size_t>(c)] != best) continue;
    ++ties;
    if (first[static_cast<std::size_t>(c)] < at) {
      at = first[static_cast<std::size_t>(c)];
      o.winner_class = c;
    }
  }
  o.tie = ties > 1;
  return o;
}

/// Every list over kVoteAlphabet of length 1..max_len, checked against the
/// oracle. Returns the number of lists that disagree; `checked` gets the total.
inline std::size_t vote_oracle_mismatches(std::size_t max_len, std::size_t& checked) {
  constexpr std::size_t k = std::size(kVoteAlphabet);
  std::vector<ExtractedAnswer> symbols;
  for (const auto& s : kVoteAlphabet) symbols.push_back(canonicalize(s.text));
  std::size_t bad = 0;
  checked = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::size_t> digit(len, 0);
    for (;;) {
      std::vector<ExtractedAnswer> list;
      std::vector<int> classes;
      for (auto d : digit) {
        list.push_back(symbols[d]);
        classes.push_back(kVoteAlphabet[d].class_of);
      }
      const auto vote = majority_vote(list);
      const auto want = oracle_vote(classes);
      bool ok = vote.voters == want.voters && vote.tie == want.tie && vote.winner.has_value() == (want.winner_class >= 0);
      if (ok && vote.winner) {
        ok = vote.winner_multiplicity() == want.multiplicity;
        for (std::size_t i = 0; i < len && ok; ++i) {
          if (classes[i] == want.winner_class) ok = equivalent(*vote.winner, list[i]);
          else ok = !equivalent(*vote.winner, list[i]);
        }
      }
      if (!ok) ++bad;
      ++checked;
      std::size_t pos = 0;
      while (pos < len && ++digit[pos] == k) digit[pos++] = 0;
      if (pos == len) break;
    }
  }
  return bad;
}

struct SurrogateFdOutcome {
  double worst_relative_error = 0.0;
  std::size_t instances = 0;
  std::size_t resampled = 0;       // draws rejected for sitting near a clip kink
  std::size_t clipped_tokens = 0;  // tokens whose clip branch was active
  std::size_t tokens = 0;
};

/// Analytic surrogate gradient against central differences on SeqPolicy, with
/// θ != θ_old != θ_ref. A draw with any ratio within 1e-4 of 1 ± ε is redrawn,
/// since the objective is not differentiable there.
inline SurrogateFdOutcome surrogate_fd_check(std::uint64_t seed, std::size_t instances, double h = 1e-6) {
  const TaskSet tasks = generate_tasks("linear", 2, seed, 3);
  const SeqPolicy pol(tasks);
  const SurrogateOptions opt{0.2, 0.01};
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution coin(0.5);
  SurrogateFdOutcome out;
  std::uint64_t draw = 0;
  while (out.instances < instances) {
    ++draw;
    const Task& task = tasks.tasks[draw % tasks.size()];
    const PolicyParams old = random_params(pol.dim(), gen, 0.5);
    PolicyParams theta = old, ref = old;
    std::normal_distribution<double> nd(0.0, 0.15);
    for (auto& v : theta.values) v += nd(gen);
    for (auto& v : ref.values) v += nd(gen);
    const auto group = sample_group(pol, old, task, 4, 1.0, seed, draw);
    std::vector<double> rewards(group.size());
    for (auto& r : rewards) r = coin(gen) ? 1.0 : 0.0;
    rewards[0] = 1.0;
    rewards[1] = 0.0;
    const auto stats = normalize_advantages(rewards);

    const auto res = surrogate(pol, task, group, stats, theta, ref, opt);
    bool near_kink = false;
    for (const auto& resp : res.tokens) {
      for (const auto& ts : resp) {
        near_kink = near_kink || std::abs(ts.ratio - (1 - opt.clip_eps)) < 1e-4 ||
                    std::abs(ts.ratio - (1 + opt.clip_eps)) < 1e-4;
      }
    }
    if (near_kink) {
      ++out.resampled;
      continue;
    }
    std::vector<double> numeric(pol.dim(), 0.0);
    for (std::size_t k = 0; k < pol.dim(); ++k) {
      PolicyParams up = theta, dn = theta;
      up.values[k] += h;
      dn.values[k] -= h;
      numeric[k] = (surrogate(pol, task, group, stats, up, ref, opt).objective -
                    surrogate(pol, task, group, stats, dn, ref, opt).objective) /
                   (2 * h);
    }
    out.worst_relative_error = std::max(out.worst_relative_error, relative_error(res.gradient, numeric));
    out.clipped_tokens += res.clipped_tokens;
    out.tokens += res.total_tokens;
    ++out.instances;
  }
  return out;
}

// Sum over all 2^n outcome sequences with more than n/2 successes, each weighted
// p^k (1-p)^(n-k), in exact arithmetic. Weights depend only on k, so they are
// computed once per k.
inline Rational enumerate_strict(double p, unsigned n) {
  const Rational q = detail::exact_rational(p);
  std::vector<Rational> weight(n + 1, Rational(1));
  for (unsigned k = 0; k <= n; ++k) {
    for (unsigned i = 0; i < n; ++i) weight[k] *= i < k ? q : Rational(1) - q;
  }
  Rational total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    const auto k = static_cast<unsigned>(std::popcount(mask));
    if (2 * k > n) total += weight[k];
  }
  return total;
}

}  // namespace mmupt::test
