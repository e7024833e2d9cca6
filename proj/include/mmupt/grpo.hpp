#pragma once

// Group-relative advantages, the clipped token-level surrogate with a KL
// penalty to a frozen reference, and an AdamW ascent step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "policy.hpp"
#include "voting.hpp"

namespace mmupt {

class GrpoError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class StdMode { population, sample };

struct GroupStats {
  std::vector<double> rewards;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> advantages;
};

/// Â_i = (r_i - mean) / std. A group with identical rewards has std 0 and
/// advantages exactly 0.
inline GroupStats normalize_advantages(std::span<const double> rewards, StdMode mode = StdMode::population) {
  const std::size_t g = rewards.size();
  if (g < 2) throw GrpoError("advantage normalization needs a group of at least 2");
  if (!std::all_of(rewards.begin(), rewards.end(), [](double r) { return std::isfinite(r); }))
    throw GrpoError("non-finite reward");
  GroupStats s;
  s.rewards.assign(rewards.begin(), rewards.end());
  s.advantages.assign(g, 0.0);
  s.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(g);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
    s.mean = rewards[0];
    return s;
  }
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  const double denom = mode == StdMode::population ? static_cast<double>(g) : static_cast<double>(g - 1);
  s.std = std::sqrt(ss / denom);
  for (std::size_t i = 0; i < g; ++i) s.advantages[i] = (rewards[i] - s.mean) / s.std;
  return s;
}

/// Per-token KL estimator exp(Δ) - Δ - 1 with Δ = ref - new. Nonnegative,
/// zero iff the two log-probabilities agree.
inline double kl_token(double new_logprob, double ref_logprob) {
  if (!std::isfinite(new_logprob) || !std::isfinite(ref_logprob)) throw GrpoError("non-finite log-probability");
  const double delta = ref_logprob - new_logprob;
  return std::expm1(delta) - delta;
}

struct TokenStats {
  double ratio = 1.0;
  bool clipped = false;
  double kl = 0.0;
};

struct SurrogateOptions {
  double clip_eps = 0.2;
  double kl_beta = 0.01;
};

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> gradient;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  std::size_t total_tokens = 0;
  std::size_t clipped_tokens = 0;
  /// Per response, per token.
  std::vector<std::vector<TokenStats>> tokens;
};

/// (1/G) Σ_i (1/|o_i|) Σ_t { min[γ Â_i, clip(γ, 1-ε, 1+ε) Â_i] - β·KL_t },
/// γ = exp(log π_θ - old_logprob), and its gradient w.r.t. θ. Advantages are
/// constants. A token whose clipped branch is active contributes no
/// policy-gradient term. Per-response work may run on `workers` threads; the
/// reduction is in response order.
inline SurrogateResult surrogate(const Policy& policy, const Task& task, std::span<const Response> group,
                                 const GroupStats& stats, const PolicyParams& params, const PolicyParams& ref_params,
                                 const SurrogateOptions& options, std::size_t workers = 1) {
  const std::size_t g = group.size();
  if (g == 0 || stats.advantages.size() != g) throw GrpoError("group and advantage lengths differ");
  if (!(options.clip_eps > 0.0)) throw GrpoError("clip range must be positive");
  if (!(options.kl_beta >= 0.0)) throw GrpoError("KL coefficient must be nonnegative");
  if (params.dim() != policy.dim() || ref_params.dim() != policy.dim()) throw GrpoError("parameter dimension mismatch");

  struct Partial {
    double objective = 0.0;
    double kl_sum = 0.0;
    std::size_t clipped = 0;
    std::vector<double> gradient;
    std::vector<TokenStats> tokens;
  };
  std::vector<Partial> partials(g);
  const double lo = 1.0 - options.clip_eps;
  const double hi = 1.0 + options.clip_eps;

  parallel_for(g, workers, [&](std::size_t i) {
    const Response& r = group[i];
    if (r.tokens.empty() || r.old_logprobs.size() != r.tokens.size()) throw GrpoError("malformed response");
    const auto now = policy.score(params, task, r.tokens, true);
    const auto ref = policy.score(ref_params, task, r.tokens, false);
    const double adv = stats.advantages[i];
    const double weight = 1.0 / (static_cast<double>(g) * static_cast<double>(r.tokens.size()));
    Partial& out = partials[i];
    out.gradient.assign(policy.dim(), 0.0);
    out.tokens.reserve(r.tokens.size());
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      TokenStats ts;
      ts.ratio = std::exp(now.logprobs[t] - r.old_logprobs[t]);
      const double unclipped = ts.ratio * adv;
      const double clipped = std::clamp(ts.ratio, lo, hi) * adv;
      ts.clipped = clipped < unclipped;
      ts.kl = kl_token(now.logprobs[t], ref.logprobs[t]);
      out.objective += weight * (std::min(unclipped, clipped) - options.kl_beta * ts.kl);
      out.kl_sum += ts.kl;
      if (ts.clipped) ++out.clipped;
      // d/dlogπ of the KL estimator is 1 - exp(ref - new).
      const double kl_slope = -std::expm1(ref.logprobs[t] - now.logprobs[t]);
      const double coef = (ts.clipped ? 0.0 : adv * ts.ratio) - options.kl_beta * kl_slope;
      now.grads[t].add_to(out.gradient, weight * coef);
      out.tokens.push_back(ts);
    }
  });

  SurrogateResult res;
  res.gradient.assign(policy.dim(), 0.0);
  double kl_sum = 0.0;
  for (auto& p : partials) {
    res.objective += p.objective;
    kl_sum += p.kl_sum;
    res.clipped_tokens += p.clipped;
    res.total_tokens += p.tokens.size();
    for (std::size_t k = 0; k < res.gradient.size(); ++k) res.gradient[k] += p.gradient[k];
    res.tokens.push_back(std::move(p.tokens));
  }
  if (res.total_tokens > 0) {
    res.clip_fraction = static_cast<double>(res.clipped_tokens) / static_cast<double>(res.total_tokens);
    res.mean_kl = kl_sum / static_cast<double>(res.total_tokens);
  }
  return res;
}

// --- optimizer --------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 1e-6;
  double weight_decay = 1e-2;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerStepResult {
  PolicyParams params;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

inline double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

/// One AdamW ascent step on a maximization objective. The gradient is
/// rescaled to grad_clip_norm if longer; weight decay θ ← θ - lr·wd·θ is
/// decoupled from the moment update. Throws NonFiniteGradient, leaving
/// `state` untouched, if any gradient entry is not finite.
inline OptimizerStepResult optimizer_step(const PolicyParams& params, std::span<const double> gradient,
                                          AdamState& state, const OptimizerConfig& cfg) {
  if (gradient.size() != params.dim()) throw GrpoError("gradient dimension mismatch");
  for (std::size_t k = 0; k < gradient.size(); ++k) {
    if (!std::isfinite(gradient[k]))
      throw NonFiniteGradient("non-finite gradient entry at index " + std::to_string(k));
  }
  if (state.m.empty()) {
    state.m.assign(params.dim(), 0.0);
    state.v.assign(params.dim(), 0.0);
  }
  if (state.m.size() != params.dim() || state.v.size() != params.dim()) throw GrpoError("optimizer state mismatch");

  OptimizerStepResult out;
  out.grad_norm = l2_norm(gradient);
  double scale = 1.0;
  if (cfg.grad_clip_norm > 0.0 && out.grad_norm > cfg.grad_clip_norm) {
    scale = cfg.grad_clip_norm / out.grad_norm;
    out.clipped = true;
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  out.params = params;
  auto& theta = out.params.values;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = gradient[k] * scale;
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    theta[k] -= cfg.learning_rate * cfg.weight_decay * theta[k];
    const double m_hat = state.m[k] / bc1;
    const double v_hat = state.v[k] / bc2;
    theta[k] += cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
  return out;
}

struct UpdateReport {
  double objective = 0.0;
  double grad_norm = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  std::uint64_t step_index = 0;
};

/// One prompt's group after extraction, voting and reward assignment.
struct RewardedGroup {
  std::vector<Response> responses;
  std::vector<ExtractedAnswer> answers;
  VoteResult vote;
  std::vector<double> rewards;
  GroupStats stats;
};

}  // namespace mmupt
