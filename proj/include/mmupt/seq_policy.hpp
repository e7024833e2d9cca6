#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "policy.hpp"

namespace mmupt {

/// Log-linear autoregressive policy over a small vocabulary.
///
/// Grammar: up to kMaxFiller filler tokens, one answer token, the terminal
/// token. Vocabulary layout: 0 = terminal, [1, 1 + kFillerCount) fillers,
/// then one answer slot per position of the task's answer space.
///
/// A token's logit is the sum of three weights, one per context feature:
///   w_task[bucket(task)][tok] + w_prev[prev][tok] + w_pos[bucket(position)][tok]
/// Each task gets its own bucket. Parameter rows are laid out task buckets,
/// then previous-token rows (one per token plus begin-of-sequence), then
/// position buckets; each row has vocab_size() entries.
class SeqPolicy final : public Policy {
 public:
  static constexpr int kTerminal = 0;
  static constexpr std::size_t kFillerCount = 8;
  static constexpr std::size_t kMaxFiller = 16;
  static constexpr std::size_t kPositionBuckets = 5;
  static constexpr std::size_t kMaxVocab = 64;

  explicit SeqPolicy(const TaskSet& tasks) : index_(tasks) {
    vocab_ = 1 + kFillerCount + index_.max_answer_count();
    if (vocab_ > kMaxVocab) throw PolicyError("answer spaces too large for the sequence policy vocabulary");
    prev_row0_ = index_.size();
    pos_row0_ = prev_row0_ + vocab_ + 1;
    dim_ = (pos_row0_ + kPositionBuckets) * vocab_;
  }

  PolicyKind kind() const noexcept override { return PolicyKind::seq; }
  std::size_t dim() const noexcept override { return dim_; }
  std::size_t vocab_size() const noexcept override { return vocab_; }

  static constexpr int filler_token(std::size_t i) { return static_cast<int>(1 + i); }
  static constexpr int answer_token(std::size_t slot) { return static_cast<int>(1 + kFillerCount + slot); }
  static constexpr bool is_filler(int tok) { return tok >= 1 && tok < static_cast<int>(1 + kFillerCount); }
  static constexpr bool is_answer(int tok) { return tok >= static_cast<int>(1 + kFillerCount); }
  static constexpr std::size_t position_bucket(std::size_t t) { return std::min(t, kMaxFiller) / 4; }

  std::vector<double> next_token_probs(const PolicyParams& params, const Task& task, std::span<const int> prefix,
                                       double temperature) const override {
    check_params(params);
    const std::size_t bucket = index_.of(task);
    const Context ctx = context_after(task, prefix);
    return masked_softmax(logits(params, bucket, ctx), ctx.allowed, temperature);
  }

  Response sample(const PolicyParams& params, const Task& task, double temperature, CounterRng& rng) const override {
    check_params(params);
    const std::size_t bucket = index_.of(task);
    const std::size_t n_answers = task.answer_space().size();
    Response r;
    Context ctx = start_context(n_answers);
    for (;;) {
      const auto z = logits(params, bucket, ctx);
      const auto probs = masked_softmax(z, ctx.allowed, temperature);
      const auto tok = sample_categorical(probs, rng);
      r.tokens.push_back(static_cast<int>(tok));
      r.old_logprobs.push_back(masked_log_softmax(z, ctx.allowed, tok));
      if (static_cast<int>(tok) == kTerminal) break;
      ctx = advance(ctx, static_cast<int>(tok), n_answers);
    }
    r.text = render(task, r.tokens);
    return r;
  }

  TokenScores score(const PolicyParams& params, const Task& task, std::span<const int> tokens,
                    bool with_grad) const override {
    check_params(params);
    const std::size_t bucket = index_.of(task);
    const std::size_t n_answers = task.answer_space().size();
    if (tokens.empty()) throw PolicyError("empty token sequence");
    TokenScores s;
    s.logprobs.reserve(tokens.size());
    Context ctx = start_context(n_answers);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const int tok = tokens[t];
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_ || !ctx.allowed[static_cast<std::size_t>(tok)])
        throw PolicyError("token " + std::to_string(tok) + " not allowed at position " + std::to_string(t));
      const auto z = logits(params, bucket, ctx);
      s.logprobs.push_back(masked_log_softmax(z, ctx.allowed, static_cast<std::size_t>(tok)));
      if (with_grad) s.grads.push_back(token_grad(z, ctx, bucket, static_cast<std::size_t>(tok)));
      if (tok == kTerminal) {
        if (t + 1 != tokens.size()) throw PolicyError("tokens after terminal");
        return s;
      }
      ctx = advance(ctx, tok, n_answers);
    }
    throw PolicyError("sequence does not end in the terminal token");
  }

  std::vector<int> greedy(const PolicyParams& params, const Task& task) const override {
    check_params(params);
    const std::size_t bucket = index_.of(task);
    const std::size_t n_answers = task.answer_space().size();
    std::vector<int> tokens;
    Context ctx = start_context(n_answers);
    for (;;) {
      const auto probs = masked_softmax(logits(params, bucket, ctx), ctx.allowed, 1.0);
      const int tok = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      tokens.push_back(tok);
      if (tok == kTerminal) return tokens;
      ctx = advance(ctx, tok, n_answers);
    }
  }

  // Forward pass over (position, previous filler) states.
  std::vector<double> answer_distribution(const PolicyParams& params, const Task& task) const override {
    check_params(params);
    const std::size_t bucket = index_.of(task);
    const std::size_t n_answers = task.answer_space().size();
    std::vector<double> marginal(n_answers, 0.0);
    // mass[k]: probability of being at the current position with previous
    // token k (k = vocab_ means begin-of-sequence).
    std::vector<double> mass(vocab_ + 1, 0.0);
    mass[vocab_] = 1.0;
    for (std::size_t t = 0; t <= kMaxFiller; ++t) {
      std::vector<double> next(vocab_ + 1, 0.0);
      for (std::size_t prev = 0; prev <= vocab_; ++prev) {
        if (mass[prev] == 0.0) continue;
        Context ctx = filler_context(t, static_cast<int>(prev), n_answers);
        const auto probs = masked_softmax(logits(params, bucket, ctx), ctx.allowed, 1.0);
        for (std::size_t tok = 0; tok < vocab_; ++tok) {
          if (probs[tok] == 0.0) continue;
          if (is_answer(static_cast<int>(tok))) marginal[tok - answer_token(0)] += mass[prev] * probs[tok];
          else next[tok] += mass[prev] * probs[tok];
        }
      }
      mass = std::move(next);
    }
    return marginal;
  }

  std::string render(const Task& task, std::span<const int> tokens) const override {
    static constexpr std::array<const char*, kFillerCount> words{"so", "then", "thus", "hence",
                                                                 "note", "check", "wait", "next"};
    std::string text;
    for (int tok : tokens) {
      if (tok == kTerminal) break;
      if (!text.empty()) text.push_back(' ');
      if (is_filler(tok)) {
        text += words[static_cast<std::size_t>(tok - 1)];
        continue;
      }
      const auto slot = static_cast<std::size_t>(tok - answer_token(0));
      if (tok < 0 || slot >= task.answer_space().size()) throw PolicyError("token outside vocabulary");
      text += "the answer is \\boxed{" + task.answer_space()[slot].canonical + "}";
    }
    return text;
  }

  /// Sets only the task-bucket rows: answer slots get log p_k, fillers -ln F,
  /// so each step stops with probability 1/2 and the answer marginal is p_k.
  PolicyParams init_with_accuracy(const TaskSet& tasks, double p, const WrongMass& wrong) const override {
    PolicyParams params(dim_);
    for (const auto& t : tasks.tasks) {
      const std::size_t bucket = index_.of(t);
      const auto probs = target_answer_probs(t, p, wrong);
      double* row = params.values.data() + bucket * vocab_;
      for (std::size_t f = 0; f < kFillerCount; ++f)
        row[filler_token(f)] = -std::log(static_cast<double>(kFillerCount));
      for (std::size_t j = 0; j < probs.size(); ++j) row[answer_token(j)] = std::log(probs[j]);
    }
    return params;
  }

 private:
  struct Context {
    std::size_t position = 0;
    int prev = -1;  // -1: begin-of-sequence
    bool answered = false;
    TokenMask allowed;
  };

  Context filler_context(std::size_t position, int prev, std::size_t n_answers) const {
    Context ctx;
    ctx.position = position;
    ctx.prev = prev == static_cast<int>(vocab_) ? -1 : prev;
    ctx.allowed.assign(vocab_, 0);
    if (position < kMaxFiller) {
      for (std::size_t f = 0; f < kFillerCount; ++f) ctx.allowed[static_cast<std::size_t>(filler_token(f))] = 1;
    }
    for (std::size_t j = 0; j < n_answers; ++j) ctx.allowed[static_cast<std::size_t>(answer_token(j))] = 1;
    return ctx;
  }

  Context start_context(std::size_t n_answers) const { return filler_context(0, -1, n_answers); }

  Context advance(const Context& ctx, int tok, std::size_t n_answers) const {
    if (is_answer(tok)) {
      Context next;
      next.position = ctx.position + 1;
      next.prev = tok;
      next.answered = true;
      next.allowed.assign(vocab_, 0);
      next.allowed[kTerminal] = 1;
      return next;
    }
    return filler_context(ctx.position + 1, tok, n_answers);
  }

  Context context_after(const Task& task, std::span<const int> prefix) const {
    const std::size_t n_answers = task.answer_space().size();
    Context ctx = start_context(n_answers);
    for (int tok : prefix) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_ || !ctx.allowed[static_cast<std::size_t>(tok)] ||
          tok == kTerminal)
        throw PolicyError("invalid prefix");
      ctx = advance(ctx, tok, n_answers);
    }
    return ctx;
  }

  std::array<std::size_t, 3> rows(std::size_t bucket, const Context& ctx) const {
    const std::size_t prev_row = prev_row0_ + (ctx.prev < 0 ? vocab_ : static_cast<std::size_t>(ctx.prev));
    return {bucket, prev_row, pos_row0_ + position_bucket(ctx.position)};
  }

  std::vector<double> logits(const PolicyParams& params, std::size_t bucket, const Context& ctx) const {
    std::vector<double> z(vocab_, 0.0);
    for (std::size_t r : rows(bucket, ctx)) {
      const double* w = params.values.data() + r * vocab_;
      for (std::size_t k = 0; k < vocab_; ++k) z[k] += w[k];
    }
    return z;
  }

  // ∇ log π(tok) = φ(ctx, tok) - E_π[φ(ctx, ·)]: per feature row, e_tok - π.
  SparseGrad token_grad(const std::vector<double>& z, const Context& ctx, std::size_t bucket,
                        std::size_t tok) const {
    SparseGrad g;
    if (std::count(ctx.allowed.begin(), ctx.allowed.end(), 1) == 1) return g;
    const auto probs = masked_softmax(z, ctx.allowed, 1.0);
    for (std::size_t r : rows(bucket, ctx)) {
      for (std::size_t k = 0; k < vocab_; ++k) {
        if (!ctx.allowed[k]) continue;
        g.index.push_back(r * vocab_ + k);
        g.value.push_back((k == tok ? 1.0 : 0.0) - probs[k]);
      }
    }
    return g;
  }

  TaskIndex index_;
  std::size_t vocab_ = 0;
  std::size_t prev_row0_ = 0;
  std::size_t pos_row0_ = 0;
  std::size_t dim_ = 0;
};

}  // namespace mmupt
