#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "support.hpp"

using namespace mmupt;
using mmupt::test::ans;

namespace {

std::vector<ExtractedAnswer> answers(std::initializer_list<const char*> xs) {
  std::vector<ExtractedAnswer> out;
  for (const char* x : xs) out.push_back(ans(x));
  return out;
}

}  // namespace

TEST(MajorityVote, Unanimous) {
  const auto v = majority_vote(answers({"A", "A", "A", "A"}));
  ASSERT_TRUE(v.winner);
  EXPECT_EQ(v.winner->canonical, "A");
  EXPECT_FALSE(v.tie);
  EXPECT_EQ(v.voters, 4u);
}

TEST(MajorityVote, Plurality) {
  const auto v = majority_vote(answers({"A", "A", "B", "C"}));
  ASSERT_TRUE(v.winner);
  EXPECT_EQ(v.winner->canonical, "A");
  EXPECT_EQ(v.winner_multiplicity(), 2u);
  EXPECT_FALSE(v.tie);
}

TEST(MajorityVote, TieGoesToFirstSeen) {
  const auto v = majority_vote(answers({"A", "B", "A", "B"}));
  ASSERT_TRUE(v.winner);
  EXPECT_EQ(v.winner->canonical, "A");
  EXPECT_TRUE(v.tie);
  const auto w = majority_vote(answers({"B", "A", "A", "B"}));
  EXPECT_EQ(w.winner->canonical, "B");
}

TEST(MajorityVote, AllAbstain) {
  const auto v = majority_vote(answers({"", ""}));
  EXPECT_FALSE(v.winner);
  EXPECT_EQ(v.voters, 0u);
  EXPECT_TRUE(v.counts.empty());
}

TEST(MajorityVote, AbstentionsDoNotVote) {
  const auto v = majority_vote(answers({"", "", "", "C", "D", "C"}));
  EXPECT_EQ(v.winner->canonical, "C");
  EXPECT_EQ(v.voters, 3u);
}

TEST(MajorityVote, EquivalentRenderingsMerge) {
  const auto v = majority_vote(answers({"0.5", "2", "1/2", "2"}));
  EXPECT_TRUE(v.tie);
  EXPECT_EQ(v.winner->canonical, "1/2");
  ASSERT_EQ(v.counts.size(), 2u);
  EXPECT_EQ(v.counts[0].second, 2u);
}

TEST(Rewards, PseudoExamples) {
  auto g = answers({"A", "A", "B", "C"});
  EXPECT_EQ(pseudo_rewards(g, majority_vote(g)), (std::vector<double>{1, 1, 0, 0}));
  g = answers({"7", "7", "7"});
  EXPECT_EQ(pseudo_rewards(g, majority_vote(g)), (std::vector<double>{1, 1, 1}));
  g = answers({"", ""});
  EXPECT_EQ(pseudo_rewards(g, majority_vote(g)), (std::vector<double>{0, 0}));
}

TEST(Rewards, SupervisedExamples) {
  EXPECT_EQ(supervised_rewards(answers({"B", "A", "B"}), ans("B")), (std::vector<double>{1, 0, 1}));
  EXPECT_EQ(supervised_rewards(answers({"3", "3"}), ans("3")), (std::vector<double>{1, 1}));
  EXPECT_EQ(supervised_rewards(answers({"3", "4"}), ans("5")), (std::vector<double>{0, 0}));
  EXPECT_THROW(supervised_rewards(answers({"3"}), ExtractedAnswer{}), std::invalid_argument);
}

namespace {

std::vector<ExtractedAnswer> random_group(std::mt19937_64& gen) {
  static const char* pool[] = {"1", "2", "3", "1/1", "", "A", "(a)"};
  std::uniform_int_distribution<std::size_t> len(1, 12), pick(0, std::size(pool) - 1);
  std::vector<ExtractedAnswer> g;
  const auto n = len(gen);
  for (std::size_t i = 0; i < n; ++i) g.push_back(ans(pool[pick(gen)]));
  return g;
}

}  // namespace

TEST(VoteProperty, Invariants) {
  std::mt19937_64 gen(21);
  for (int it = 0; it < 2000; ++it) {
    const auto g = random_group(gen);
    const auto v = majority_vote(g);
    std::size_t total = 0;
    for (const auto& [a, n] : v.counts) {
      total += n;
      EXPECT_LE(n, v.winner_multiplicity());
    }
    EXPECT_EQ(total, v.voters);
    EXPECT_LE(v.voters, g.size());
    EXPECT_EQ(v.winner.has_value(), v.voters > 0);
    const auto r = pseudo_rewards(g, v);
    EXPECT_EQ(std::accumulate(r.begin(), r.end(), 0.0), static_cast<double>(v.winner_multiplicity()));
  }
}

TEST(VoteProperty, PermutationCovariance) {
  std::mt19937_64 gen(22);
  for (int it = 0; it < 1000; ++it) {
    const auto g = random_group(gen);
    const auto v = majority_vote(g);
    std::vector<std::size_t> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<ExtractedAnswer> h;
    for (auto i : perm) h.push_back(g[i]);
    const auto w = majority_vote(h);
    EXPECT_EQ(v.tie, w.tie);
    EXPECT_EQ(v.voters, w.voters);
    if (!v.tie && v.winner) {
      ASSERT_TRUE(w.winner);
      EXPECT_TRUE(equivalent(*v.winner, *w.winner));
      const auto rg = pseudo_rewards(g, v);
      const auto rh = pseudo_rewards(h, w);
      for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(rh[k], rg[perm[k]]);
    }
  }
}

TEST(VoteProperty, MatchesBruteForceOracle) {
  std::size_t checked = 0;
  EXPECT_EQ(mmupt::test::vote_oracle_mismatches(6, checked), 0u);
  EXPECT_EQ(checked, 19530u);
}
