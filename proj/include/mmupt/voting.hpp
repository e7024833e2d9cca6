#pragma once

// Majority voting over extracted answers and the two reward rules.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "answer.hpp"

namespace mmupt {

struct VoteResult {
  std::optional<ExtractedAnswer> winner;
  /// Equivalence classes in first-occurrence order.
  std::vector<std::pair<ExtractedAnswer, std::size_t>> counts;
  bool tie = false;
  std::size_t voters = 0;

  std::size_t winner_multiplicity() const noexcept {
    std::size_t best = 0;
    for (const auto& [answer, n] : counts) best = std::max(best, n);
    return best;
  }
};

/// Answers of kind none abstain. The largest class wins; ties go to the class
/// seen first, and are flagged.
inline VoteResult majority_vote(std::span<const ExtractedAnswer> answers) {
  VoteResult result;
  for (const auto& a : answers) {
    if (a.is_none()) continue;
    ++result.voters;
    bool merged = false;
    for (auto& [rep, n] : result.counts) {
      if (equivalent(rep, a)) {
        ++n;
        merged = true;
        break;
      }
    }
    if (!merged) result.counts.emplace_back(a, 1);
  }
  std::size_t best = 0;
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < result.counts.size(); ++i) {
    if (result.counts[i].second > best) {
      best = result.counts[i].second;
      best_index = i;
    }
  }
  if (result.counts.empty()) return result;
  result.winner = result.counts[best_index].first;
  for (std::size_t i = 0; i < result.counts.size(); ++i) {
    if (i != best_index && result.counts[i].second == best) result.tie = true;
  }
  return result;
}

/// r_i = 1 iff answer i agrees with the vote winner.
inline std::vector<double> pseudo_rewards(std::span<const ExtractedAnswer> answers, const VoteResult& vote) {
  std::vector<double> rewards(answers.size(), 0.0);
  if (!vote.winner) return rewards;
  for (std::size_t i = 0; i < answers.size(); ++i) rewards[i] = equivalent(answers[i], *vote.winner) ? 1.0 : 0.0;
  return rewards;
}

/// Label-based rewards for the supervised baseline.
inline std::vector<double> supervised_rewards(std::span<const ExtractedAnswer> answers, const ExtractedAnswer& truth) {
  if (truth.is_none()) throw std::invalid_argument("supervised_rewards: truth must be an extractable answer");
  std::vector<double> rewards(answers.size(), 0.0);
  for (std::size_t i = 0; i < answers.size(); ++i) rewards[i] = equivalent(answers[i], truth) ? 1.0 : 0.0;
  return rewards;
}

}  // namespace mmupt
