#pragma once

// Paired-arm simulation experiments. Every arm replays the same seeded
// stream (common random numbers): same users, same query noise, same
// feedback randomness per turn; only the serving model differs.

#include <cmath>
#include <map>
#include <string>

#include <json.hpp>

#include "dma/common.hpp"
#include "dma/orchestrator.hpp"
#include "dma/simulator.hpp"

namespace dma {

struct ExperimentConfig {
  std::size_t corpus_docs = 2000;
  std::size_t corpus_topics = 8;
  SimConfig sim{};
  StreamConfig stream{300, 10, 1};
  CycleConfig cycle{};
  // The satisfaction threshold is the quantile of the static arm's list
  // utilities at which that arm is satisfied on 60% of turns.
  double static_satisfaction_target = 0.6;
};

enum class ArmKind { kStatic, kFull, kBatch, kNoDoc, kNoList, kNoResp, kCascade };

inline std::string to_string(ArmKind a) {
  switch (a) {
    case ArmKind::kStatic: return "static";
    case ArmKind::kFull: return "dma_nearline";
    case ArmKind::kBatch: return "dma_batch";
    case ArmKind::kNoDoc: return "no_doc";
    case ArmKind::kNoList: return "no_list";
    case ArmKind::kNoResp: return "no_resp";
    case ArmKind::kCascade: return "cascade";
  }
  return "unknown";
}

inline CycleConfig arm_cycle_config(ArmKind arm, CycleConfig base) {
  switch (arm) {
    case ArmKind::kBatch: base.cadence = Cadence::kBatch; break;
    case ArmKind::kNoDoc: base.use_doc = false; break;
    case ArmKind::kNoList: base.use_list = false; break;
    case ArmKind::kNoResp: base.use_resp = false; break;
    case ArmKind::kCascade: base.fusion = FusionMode::kCascade; break;
    default: break;
  }
  return base;
}

struct TurnMetric {
  SessionId session = 0;
  double utility = 0.0;
  double ndcg = 0.0;
};

struct ArmResult {
  ArmKind arm = ArmKind::kStatic;
  std::vector<TurnMetric> turns;
  std::size_t cycles = 0;
  std::size_t promotions = 0;
  std::size_t aborted = 0;
  std::size_t ppo_rows = 0;
  std::size_t live_version = 0;
  double final_alpha = 0.0;
};

inline ArmResult run_arm(const Corpus& corpus, const ExperimentConfig& cfg, ArmKind arm) {
  ArmResult out;
  out.arm = arm;
  auto record = [&](const TurnOutput& t) {
    Vec u;
    for (std::size_t i : t.served_index) u.push_back(t.context.oracle_utilities[i]);
    out.turns.push_back({t.session, list_utility(u), ndcg_at_m(t.context.oracle_utilities, t.served_index)});
  };
  if (arm == ArmKind::kStatic) {
    const Ranker r = static_ranker();
    run_stream(corpus, cfg.sim, cfg.stream, [&]() -> const Ranker& { return r; },
               [&](TurnOutput&& t) { record(t); });
    return out;
  }
  CycleConfig cc = arm_cycle_config(arm, cfg.cycle);
  cc.seed = derive_seed(cfg.stream.seed, "orchestrator");
  NearlineOrchestrator orch(cc, cfg.sim.served_size);
  std::size_t clock = 0;
  std::size_t ranker_version = static_cast<std::size_t>(-1);
  Ranker ranker;
  run_stream(
      corpus, cfg.sim, cfg.stream,
      [&]() -> const Ranker& {
        const VersionPtr live = orch.live();
        if (live->index != ranker_version) {
          ranker = version_ranker(live);
          ranker_version = live->index;
        }
        return ranker;
      },
      [&](TurnOutput&& t) {
        record(t);
        orch.observe(t, clock++);
      });
  for (const auto& c : orch.cycles()) {
    ++out.cycles;
    if (c.aborted) ++out.aborted;
    if (!c.aborted && c.decision.promote) ++out.promotions;
  }
  for (std::size_t v = 1; v < orch.registry().size(); ++v)
    out.ppo_rows += orch.registry().at(v)->provenance.ppo_rows.size();
  out.live_version = orch.live()->index;
  out.final_alpha = orch.live()->models.alpha;
  return out;
}

// Value below which a fraction (1 - target) of the utilities fall.
inline double calibrate_threshold(const ArmResult& reference, double target_satisfied) {
  Vec u;
  for (const auto& t : reference.turns) u.push_back(t.utility);
  require(!u.empty(), "cannot calibrate on an empty arm");
  std::sort(u.begin(), u.end());
  const double q = std::clamp(1.0 - target_satisfied, 0.0, 1.0);
  const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(u.size() - 1)));
  return u[pos];
}

struct ArmSummary {
  double satisfaction = 0.0;
  double ndcg = 0.0;
  double mean_utility = 0.0;
  std::map<SessionId, double> session_satisfaction;
  std::map<SessionId, double> session_ndcg;
};

inline ArmSummary summarize(const ArmResult& r, double threshold) {
  ArmSummary s;
  std::map<SessionId, std::size_t> counts;
  for (const auto& t : r.turns) {
    const double sat = t.utility >= threshold ? 1.0 : 0.0;
    s.satisfaction += sat;
    s.ndcg += t.ndcg;
    s.mean_utility += t.utility;
    s.session_satisfaction[t.session] += sat;
    s.session_ndcg[t.session] += t.ndcg;
    ++counts[t.session];
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, r.turns.size()));
  s.satisfaction /= n;
  s.ndcg /= n;
  s.mean_utility /= n;
  for (auto& [sid, v] : s.session_satisfaction) v /= static_cast<double>(counts[sid]);
  for (auto& [sid, v] : s.session_ndcg) v /= static_cast<double>(counts[sid]);
  return s;
}

// Two-sided sign test over non-zero paired differences.
inline double sign_test_p(std::span<const double> diffs) {
  std::size_t pos = 0;
  std::size_t n = 0;
  for (double d : diffs) {
    if (d == 0.0) continue;
    ++n;
    if (d > 0) ++pos;
  }
  if (n == 0) return 1.0;
  const std::size_t k = std::min(pos, n - pos);
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                         std::lgamma(static_cast<double>(n - i) + 1);
    tail += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

struct Comparison {
  std::string arm;
  std::string reference;
  double delta_satisfaction = 0.0;
  double delta_ndcg = 0.0;
  Vec session_deltas;  // satisfaction, arm minus reference, by session id
  double sign_test_p = 1.0;
};

inline Comparison compare(const std::string& arm, const ArmSummary& a, const std::string& reference,
                          const ArmSummary& b) {
  Comparison c{arm, reference, a.satisfaction - b.satisfaction, a.ndcg - b.ndcg, {}, 1.0};
  for (const auto& [sid, v] : a.session_satisfaction) {
    auto it = b.session_satisfaction.find(sid);
    require(it != b.session_satisfaction.end(), "session ", sid, " missing from reference arm");
    c.session_deltas.push_back(v - it->second);
  }
  c.sign_test_p = dma::sign_test_p(c.session_deltas);
  return c;
}

enum class ExperimentMode { kAbDrift, kAblation, kCadence, kFusion, kAll };

inline ExperimentMode experiment_mode_from_string(const std::string& s) {
  if (s == "ab_drift") return ExperimentMode::kAbDrift;
  if (s == "ablation") return ExperimentMode::kAblation;
  if (s == "cadence") return ExperimentMode::kCadence;
  if (s == "fusion") return ExperimentMode::kFusion;
  if (s == "all") return ExperimentMode::kAll;
  fail("unknown experiment mode '", s, "'");
}

inline std::string to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::kAbDrift: return "ab_drift";
    case ExperimentMode::kAblation: return "ablation";
    case ExperimentMode::kCadence: return "cadence";
    case ExperimentMode::kFusion: return "fusion";
    case ExperimentMode::kAll: return "all";
  }
  return "unknown";
}

inline std::vector<ArmKind> arms_for(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::kAbDrift: return {ArmKind::kStatic, ArmKind::kFull};
    case ExperimentMode::kAblation: return {ArmKind::kStatic, ArmKind::kFull, ArmKind::kNoDoc, ArmKind::kNoList, ArmKind::kNoResp};
    case ExperimentMode::kCadence: return {ArmKind::kStatic, ArmKind::kFull, ArmKind::kBatch};
    case ExperimentMode::kFusion: return {ArmKind::kStatic, ArmKind::kFull, ArmKind::kCascade};
    case ExperimentMode::kAll:
      return {ArmKind::kStatic, ArmKind::kFull,   ArmKind::kBatch,  ArmKind::kNoDoc,
              ArmKind::kNoList, ArmKind::kNoResp, ArmKind::kCascade};
  }
  return {};
}

inline std::vector<std::pair<ArmKind, ArmKind>> comparisons_for(ExperimentMode m) {
  using A = ArmKind;
  switch (m) {
    case ExperimentMode::kAbDrift: return {{A::kFull, A::kStatic}};
    case ExperimentMode::kAblation: return {{A::kNoDoc, A::kFull}, {A::kNoList, A::kFull}, {A::kNoResp, A::kFull}};
    case ExperimentMode::kCadence: return {{A::kBatch, A::kFull}};
    case ExperimentMode::kFusion: return {{A::kCascade, A::kFull}};
    case ExperimentMode::kAll:
      return {{A::kFull, A::kStatic}, {A::kBatch, A::kFull}, {A::kNoDoc, A::kFull},
              {A::kNoList, A::kFull}, {A::kNoResp, A::kFull}, {A::kCascade, A::kFull}};
  }
  return {};
}

struct ExperimentReport {
  ExperimentMode mode = ExperimentMode::kAll;
  std::uint64_t seed = 0;
  double satisfaction_threshold = 0.0;
  std::map<ArmKind, ArmResult> results;
  std::map<ArmKind, ArmSummary> summaries;
  std::vector<Comparison> comparisons;

  const ArmSummary& summary(ArmKind a) const { return summaries.at(a); }
};

inline ExperimentReport run_experiment(ExperimentMode mode, const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.stream.seed = seed;
  const Corpus corpus = gen_corpus(cfg.corpus_docs, cfg.corpus_topics, derive_seed(seed, "corpus"),
                                   cfg.sim.embedding_dim);
  ExperimentReport rep;
  rep.mode = mode;
  rep.seed = seed;
  for (ArmKind a : arms_for(mode)) rep.results[a] = run_arm(corpus, cfg, a);
  rep.satisfaction_threshold = calibrate_threshold(rep.results.at(ArmKind::kStatic), cfg.static_satisfaction_target);
  for (const auto& [a, r] : rep.results) rep.summaries[a] = summarize(r, rep.satisfaction_threshold);
  for (const auto& [a, ref] : comparisons_for(mode))
    rep.comparisons.push_back(compare(to_string(a), rep.summaries.at(a), to_string(ref), rep.summaries.at(ref)));
  return rep;
}

inline nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json arms = nlohmann::json::object();
  for (const auto& [a, res] : r.results) {
    const auto& s = r.summaries.at(a);
    arms[to_string(a)] = {{"satisfaction", s.satisfaction},
                          {"ndcg", s.ndcg},
                          {"mean_utility", s.mean_utility},
                          {"turns", res.turns.size()},
                          {"cycles", res.cycles},
                          {"promotions", res.promotions},
                          {"aborted_cycles", res.aborted},
                          {"ppo_rows", res.ppo_rows},
                          {"live_version", res.live_version},
                          {"final_alpha", res.final_alpha}};
  }
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : r.comparisons)
    comps.push_back({{"arm", c.arm},
                     {"reference", c.reference},
                     {"delta_satisfaction", c.delta_satisfaction},
                     {"delta_ndcg", c.delta_ndcg},
                     {"session_deltas", c.session_deltas},
                     {"sign_test_p", c.sign_test_p}});
  return {{"mode", to_string(r.mode)},
          {"seed", r.seed},
          {"satisfaction_threshold", r.satisfaction_threshold},
          {"arms", arms},
          {"comparisons", comps}};
}

}  // namespace dma
