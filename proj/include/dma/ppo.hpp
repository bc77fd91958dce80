#pragma once

// PPO alignment of the Plackett-Luce list policy against a list reward.
// Each query is a single-step episode: sample a prefix, score it, update.

#include <cmath>
#include <functional>

#include "dma/common.hpp"
#include "dma/featurize.hpp"
#include "dma/feedback.hpp"
#include "dma/policy.hpp"
#include "dma/rng.hpp"
#include "dma/scorers.hpp"

namespace dma {

struct PPOConfig {
  double clip = 0.2;
  double kl_coef = 0.01;
  std::size_t epochs = 4;
  std::size_t samples_per_query = 8;
  std::size_t kl_samples_per_query = 4;
  double baseline_decay = 0.9;
  double learning_rate = 0.05;
  std::size_t prefix_length = 5;
  // Backtracking halvings allowed per step before the step is dropped.
  std::size_t max_backtracks = 40;

  void validate() const {
    require(clip > 0 && clip < 1, "clip epsilon must be in (0,1)");
    require(kl_coef >= 0, "KL coefficient must be >= 0");
    require(samples_per_query >= 1, "samples_per_query must be >= 1");
    require(learning_rate > 0, "learning rate must be positive");
    require(prefix_length >= 1, "prefix length must be >= 1");
  }
};

// Candidate pool for one query: item feature rows plus item embeddings (the
// latter only feed list-level reward features).
struct PolicyQuery {
  std::vector<Vec> item_features;
  std::vector<Vec> item_embeddings;
};

struct Episode {
  std::size_t query = 0;  // index into the query batch
  Permutation prefix;
  double old_logprob = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
};

// A prefix drawn from the old policy for the KL estimate.
struct KLSample {
  std::size_t query = 0;
  Permutation prefix;
};

struct BaselineState {
  double value = 0.0;
  double decay = 0.9;
};

// Single-step GAE: advantage = r - b with b a decayed running mean of
// rewards, then centered and scaled within the round.
inline void compute_advantages(std::span<Episode> episodes, BaselineState& baseline) {
  if (episodes.empty()) return;
  Vec x(episodes.size());
  Vec r(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    require(std::isfinite(episodes[i].reward), "non-finite reward in episode ", i);
    r[i] = episodes[i].reward;
    x[i] = r[i] - baseline.value;
  }
  const double mu = mean(x);
  const double sd = std::max(stddev(x), 1e-6);
  for (std::size_t i = 0; i < episodes.size(); ++i) episodes[i].advantage = (x[i] - mu) / sd;
  baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * mean(r);
}

struct PPODiagnostics {
  double loss = 0.0;
  double surrogate = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double kl = 0.0;
};

struct PPOEvaluation {
  PPODiagnostics diag;
  Vec grad;
};

struct PPOBatch {
  std::span<const PolicyQuery> queries;
  std::vector<Episode> episodes;
  std::vector<KLSample> kl_samples;
  // Old-policy item scores per query, frozen at sampling time.
  std::vector<Vec> old_scores;
};

inline Vec item_scores(const ScorerModel& policy, const PolicyQuery& q) {
  Vec s(q.item_features.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = policy.forward(q.item_features[i]);
  return s;
}

namespace detail {

// KL(old || new) of the PL prefix distribution, Rao-Blackwellized along one
// old-policy prefix: sum over steps of the categorical KL between the two
// softmaxes over the remaining items. Returns value and d/d new_scores.
inline std::pair<double, Vec> prefix_kl(std::span<const double> old_scores, std::span<const double> new_scores,
                                        std::span<const std::size_t> prefix) {
  const std::size_t k = old_scores.size();
  std::vector<bool> taken(k, false);
  Vec grad(k, 0.0);
  double kl = 0.0;
  Vec so;
  Vec sn;
  std::vector<std::size_t> idx;
  for (std::size_t chosen : prefix) {
    so.clear();
    sn.clear();
    idx.clear();
    for (std::size_t u = 0; u < k; ++u)
      if (!taken[u]) {
        so.push_back(old_scores[u]);
        sn.push_back(new_scores[u]);
        idx.push_back(u);
      }
    const Vec lpo = log_softmax(so);
    const Vec lpn = log_softmax(sn);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double po = std::exp(lpo[r]);
      kl += po * (lpo[r] - lpn[r]);
      grad[idx[r]] += std::exp(lpn[r]) - po;
    }
    taken[chosen] = true;
  }
  return {kl, grad};
}

}  // namespace detail

// PPO loss on a frozen batch:
//   -mean_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) + beta * KL(old || new)
// with rho_i = exp(new_logprob - old_logprob) of the sampled prefix.
inline PPOEvaluation ppo_objective(const ScorerModel& policy, const PPOBatch& batch, const PPOConfig& cfg,
                                   bool with_grad = true) {
  require(!batch.episodes.empty(), "ppo: no episodes");
  const std::size_t nq = batch.queries.size();
  std::vector<Vec> scores(nq);
  std::vector<Vec> dscores(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    scores[q] = item_scores(policy, batch.queries[q]);
    dscores[q].assign(scores[q].size(), 0.0);
  }
  PPOEvaluation out;
  const double inv_n = 1.0 / static_cast<double>(batch.episodes.size());
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    const Episode& e = batch.episodes[i];
    const Vec& s = scores[e.query];
    const double lp = prefix_logprob(s, e.prefix);
    const double rho = std::exp(lp - e.old_logprob);
    if (!std::isfinite(rho)) fail("ppo: non-finite ratio in episode ", i);
    const double rho_c = std::clamp(rho, 1.0 - cfg.clip, 1.0 + cfg.clip);
    if (rho_c != rho) ++clipped;
    const double unclipped = rho * e.advantage;
    const double clipped_term = rho_c * e.advantage;
    const bool take_unclipped = unclipped <= clipped_term;
    out.diag.surrogate += inv_n * (take_unclipped ? unclipped : clipped_term);
    out.diag.mean_ratio += inv_n * rho;
    if (with_grad && take_unclipped && unclipped != 0.0) {
      // d(-rho A)/d lp = -rho A
      const Vec g = prefix_logprob_grad(s, e.prefix);
      for (std::size_t u = 0; u < g.size(); ++u) dscores[e.query][u] += -inv_n * unclipped * g[u];
    }
  }
  out.diag.clip_fraction = static_cast<double>(clipped) * inv_n;
  if (!batch.kl_samples.empty()) {
    const double inv_m = 1.0 / static_cast<double>(batch.kl_samples.size());
    for (const auto& ks : batch.kl_samples) {
      auto [kl, g] = detail::prefix_kl(batch.old_scores[ks.query], scores[ks.query], ks.prefix);
      out.diag.kl += inv_m * kl;
      if (with_grad && cfg.kl_coef != 0.0)
        for (std::size_t u = 0; u < g.size(); ++u) dscores[ks.query][u] += cfg.kl_coef * inv_m * g[u];
    }
  }
  out.diag.loss = -out.diag.surrogate + cfg.kl_coef * out.diag.kl;
  if (with_grad) {
    out.grad.assign(policy.param_count(), 0.0);
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t u = 0; u < dscores[q].size(); ++u)
        if (dscores[q][u] != 0.0) policy.accumulate_grad(batch.queries[q].item_features[u], dscores[q][u], out.grad);
  }
  return out;
}

struct PPOStepResult {
  ScorerModel policy;
  PPODiagnostics diag;  // measured before the update
  double step_size = 0.0;
};

// One gradient step on the frozen batch. The step starts at the configured
// learning rate and is halved until the loss satisfies the Armijo condition,
// so large KL coefficients hold the policy in place instead of oscillating.
inline PPOStepResult ppo_step(const ScorerModel& policy, const PPOBatch& batch, const PPOConfig& cfg) {
  cfg.validate();
  const PPOEvaluation ev = ppo_objective(policy, batch, cfg);
  PPOStepResult out{policy, ev.diag, 0.0};
  double g2 = 0.0;
  for (double g : ev.grad) g2 += g * g;
  if (g2 == 0.0) return out;
  double t = cfg.learning_rate;
  for (std::size_t attempt = 0; attempt <= cfg.max_backtracks; ++attempt, t *= 0.5) {
    ScorerModel trial = policy;
    auto p = trial.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= t * ev.grad[i];
    const double loss = ppo_objective(trial, batch, cfg, false).diag.loss;
    if (std::isfinite(loss) && loss <= ev.diag.loss - 1e-4 * t * g2) {
      out.policy = std::move(trial);
      out.step_size = t;
      return out;
    }
  }
  return out;
}

using ListReward = std::function<double(const PolicyQuery&, std::span<const std::size_t>)>;

// Reward of a served prefix under a list reward model.
inline ListReward reward_from_model(const RewardModel& rm) {
  return [rm](const PolicyQuery& q, std::span<const std::size_t> prefix) {
    const Vec decay = positional_decay(prefix.size());
    return rm(prefix_list_features(q.item_features, q.item_embeddings, prefix, decay));
  };
}

// Samples a frozen PPO batch from the current policy.
inline PPOBatch sample_batch(const ScorerModel& policy, std::span<const PolicyQuery> queries,
                             const ListReward& reward, const PPOConfig& cfg, Rng& rng) {
  PPOBatch batch;
  batch.queries = queries;
  batch.old_scores.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Vec s = item_scores(policy, queries[q]);
    const std::size_t m = std::min(cfg.prefix_length, s.size());
    for (std::size_t n = 0; n < cfg.samples_per_query; ++n) {
      RankedSample rs = gumbel_topk_sample(s, m, rng);
      Episode e;
      e.query = q;
      e.old_logprob = rs.logprob;
      e.reward = reward(queries[q], rs.prefix);
      e.prefix = std::move(rs.prefix);
      batch.episodes.push_back(std::move(e));
    }
    for (std::size_t n = 0; n < cfg.kl_samples_per_query; ++n)
      batch.kl_samples.push_back({q, gumbel_topk_sample(s, m, rng).prefix});
    batch.old_scores.push_back(s);
  }
  return batch;
}

struct AlignRoundResult {
  ScorerModel policy;
  double mean_reward = 0.0;
  std::vector<PPODiagnostics> steps;
};

inline AlignRoundResult align_round(const ScorerModel& policy, const ListReward& reward,
                                    std::span<const PolicyQuery> queries, const PPOConfig& cfg, Rng& rng,
                                    BaselineState& baseline) {
  cfg.validate();
  require(!queries.empty(), "align_round: no queries");
  PPOBatch batch = sample_batch(policy, queries, reward, cfg, rng);
  Vec rewards;
  for (const auto& e : batch.episodes) rewards.push_back(e.reward);
  baseline.decay = cfg.baseline_decay;
  compute_advantages(batch.episodes, baseline);
  AlignRoundResult out{policy, mean(rewards), {}};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    PPOStepResult st = ppo_step(out.policy, batch, cfg);
    out.steps.push_back(st.diag);
    out.policy = std::move(st.policy);
  }
  return out;
}

struct AlignResult {
  ScorerModel policy;
  std::vector<AlignRoundResult> rounds;  // policies inside are not retained
};

inline AlignResult align(ScorerModel policy, const ListReward& reward, std::span<const PolicyQuery> queries,
                         const PPOConfig& cfg, std::size_t rounds, std::uint64_t seed) {
  Rng rng = make_rng(seed, "ppo");
  BaselineState baseline{0.0, cfg.baseline_decay};
  AlignResult out{std::move(policy), {}};
  for (std::size_t r = 0; r < rounds; ++r) {
    AlignRoundResult rr = align_round(out.policy, reward, queries, cfg, rng, baseline);
    out.policy = rr.policy;
    rr.policy = ScorerModel{};
    out.rounds.push_back(std::move(rr));
  }
  return out;
}

}  // namespace dma
