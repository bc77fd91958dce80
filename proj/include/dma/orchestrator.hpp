#pragma once

// Nearline loop: accumulate confidence-filtered feedback, run update cycles
// (teachers -> PPO alignment -> distillation), shadow-evaluate candidates
// and swap the live serving model.

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <variant>

#include <json.hpp>

#include "dma/common.hpp"
#include "dma/distill.hpp"
#include "dma/featurize.hpp"
#include "dma/feedback.hpp"
#include "dma/policy.hpp"
#include "dma/ppo.hpp"
#include "dma/rng.hpp"
#include "dma/scorers.hpp"
#include "dma/simulator.hpp"
#include "dma/trainers.hpp"

namespace dma {

// --- configuration ------------------------------------------------------------

enum class Cadence { kNearline, kBatch };
enum class FusionMode { kDistill, kCascade };

inline std::string to_string(Cadence c) { return c == Cadence::kNearline ? "nearline" : "batch"; }
inline std::string to_string(FusionMode f) { return f == FusionMode::kDistill ? "distill" : "cascade"; }

struct CycleConfig {
  std::size_t trigger_threshold = 500;
  Cadence cadence = Cadence::kNearline;
  // Batch cadence fires every `batch_multiplier` x threshold events.
  std::size_t batch_multiplier = 10;
  bool use_doc = true;
  bool use_list = true;
  bool use_resp = true;
  FusionMode fusion = FusionMode::kDistill;
  double min_confidence = kDefaultMinConfidence;
  // Most recent accepted events kept for training.
  std::size_t window_events = 1000;

  Arch arch = Arch::kLinear;
  TrainConfig pointwise{0.1, 32, 3, 0};
  TrainConfig listwise{0.1, 16, 3, 0};
  TrainConfig reward{0.2, 16, 3, 0};
  PPOConfig ppo{};
  std::size_t ppo_rounds = 5;
  std::size_t ppo_queries = 32;
  GbdtConfig gbdt{};
  double promote_tolerance = 0.005;
  std::size_t slice_size = 100;  // held-out turns kept for tuning / shadow eval
  std::uint64_t seed = 0;

  std::size_t effective_threshold() const {
    return cadence == Cadence::kNearline ? trigger_threshold : trigger_threshold * batch_multiplier;
  }

  void validate() const {
    require(trigger_threshold >= 1, "trigger threshold must be >= 1");
    require(batch_multiplier >= 1, "batch multiplier must be >= 1");
    require(min_confidence >= 0 && min_confidence <= 1, "min_confidence must be in [0,1]");
    require(window_events >= 1, "window must hold at least one event");
    pointwise.validate();
    listwise.validate();
    reward.validate();
    ppo.validate();
    gbdt.validate();
  }
};

// --- trigger counter ------------------------------------------------------------

class Accumulator {
 public:
  explicit Accumulator(std::size_t threshold) : threshold_(threshold) {
    require(threshold_ >= 1, "trigger threshold must be >= 1");
  }

  // Adds n events; returns how many cycles fire. The counter keeps the
  // overflow remainder.
  std::size_t accumulate(std::size_t n = 1) {
    count_ += n;
    std::size_t fired = 0;
    while (count_ >= threshold_) {
      count_ -= threshold_;
      ++fired;
    }
    fired_total_ += fired;
    return fired;
  }

  std::size_t count() const { return count_; }
  std::size_t fired_total() const { return fired_total_; }
  std::size_t threshold() const { return threshold_; }

 private:
  std::size_t threshold_;
  std::size_t count_ = 0;
  std::size_t fired_total_ = 0;
};

// --- featurized pools and the training window --------------------------------------

struct PoolContext {
  QueryId query = 0;
  std::vector<DocId> pool;
  std::vector<Vec> rows;
  std::vector<Vec> embeddings;
  Vec utilities;  // ground truth, used only for held-out evaluation

  std::size_t index_of(DocId d) const {
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i] == d) return i;
    fail("doc ", d, " not in pool of query ", query);
  }

  std::vector<std::size_t> indices_of(std::span<const DocId> docs) const {
    std::vector<std::size_t> out;
    for (DocId d : docs) out.push_back(index_of(d));
    return out;
  }
};

using PoolContextPtr = std::shared_ptr<const PoolContext>;

inline PoolContextPtr make_context(const RankContext& rc, QueryId query) {
  auto c = std::make_shared<PoolContext>();
  c->query = query;
  c->pool = rc.pool;
  c->rows = rc.rows;
  c->embeddings = rc.embeddings;
  c->utilities = rc.oracle_utilities;
  return c;
}

inline PoolContextPtr make_context(const Corpus& corpus, const Turn& t) {
  require(!t.query_embedding.empty(), "turn ", t.query, " has no query embedding");
  auto c = std::make_shared<PoolContext>();
  c->query = t.query;
  c->pool = t.pool;
  c->rows = pool_features(corpus, t.query_embedding, t.pool);
  for (DocId d : t.pool) c->embeddings.push_back(corpus.at(d).embedding);
  c->utilities = t.utilities;
  return c;
}

using FeedbackEvent = std::variant<DocFeedback, ListFeedback, ResponsePreference>;

struct WindowEvent {
  FeedbackEvent event;
  PoolContextPtr context;
};

struct EventCounts {
  std::size_t doc = 0;
  std::size_t list = 0;
  std::size_t resp = 0;
  std::size_t total() const { return doc + list + resp; }
};

inline EventCounts count_events(const std::deque<WindowEvent>& window) {
  EventCounts c;
  for (const auto& w : window) {
    if (std::holds_alternative<DocFeedback>(w.event))
      ++c.doc;
    else if (std::holds_alternative<ListFeedback>(w.event))
      ++c.list;
    else
      ++c.resp;
  }
  return c;
}

// --- datasets -----------------------------------------------------------------

inline Vec list_features_for(const PoolContext& ctx, std::span<const DocId> docs) {
  const auto idx = ctx.indices_of(docs);
  return prefix_list_features(ctx.rows, ctx.embeddings, idx, positional_decay(idx.size()));
}

struct CycleData {
  std::vector<DocExample> docs;
  std::vector<ListExample> lists;
  std::vector<PrefExample> prefs;
  std::vector<PoolContextPtr> contexts;  // distinct, oldest first
};

inline CycleData build_cycle_data(const std::deque<WindowEvent>& window) {
  CycleData d;
  std::map<QueryId, bool> seen;
  for (const auto& w : window) {
    const PoolContext& ctx = *w.context;
    if (const auto* e = std::get_if<DocFeedback>(&w.event)) {
      d.docs.push_back({ctx.rows[ctx.index_of(e->doc)], e->label, e->confidence});
    } else if (const auto* e = std::get_if<ListFeedback>(&w.event)) {
      ListExample le;
      for (DocId id : e->pool) le.items.push_back(ctx.rows[ctx.index_of(id)]);
      le.list_score = e->list_score;
      le.item_weights = e->item_weights;
      d.lists.push_back(std::move(le));
    } else {
      const auto& p = std::get<ResponsePreference>(w.event);
      d.prefs.push_back({list_features_for(ctx, p.list_a), list_features_for(ctx, p.list_b), p.preferred_a});
    }
    if (!seen[ctx.query]) {
      seen[ctx.query] = true;
      d.contexts.push_back(w.context);
    }
  }
  return d;
}

// Pairs every ingested feedback event with the featurized pool of its turn,
// in trace order. Events without a matching turn are dropped.
struct LoggedTurn {
  PoolContextPtr context;
  std::vector<FeedbackEvent> events;
};

inline std::vector<LoggedTurn> logged_turns(const IngestResult& log, const Corpus& corpus) {
  std::vector<LoggedTurn> out;
  for (const auto& s : log.sessions)
    for (const auto& t : s.turns) {
      LoggedTurn lt{make_context(corpus, t), {}};
      for (const auto& f : t.feedback) {
        switch (f.kind) {
          case FeedbackKind::kDoc: lt.events.emplace_back(log.docs[f.index]); break;
          case FeedbackKind::kList: lt.events.emplace_back(log.lists[f.index]); break;
          case FeedbackKind::kResp: lt.events.emplace_back(log.prefs[f.index]); break;
        }
      }
      out.push_back(std::move(lt));
    }
  return out;
}

inline std::deque<WindowEvent> window_from_log(const IngestResult& log, const Corpus& corpus,
                                               double min_confidence = 0.0) {
  std::deque<WindowEvent> w;
  for (const auto& lt : logged_turns(log, corpus))
    for (const auto& e : lt.events) {
      if (const auto* d = std::get_if<DocFeedback>(&e); d && d->confidence < min_confidence) continue;
      w.push_back({e, lt.context});
    }
  return w;
}

// --- models and the registry ---------------------------------------------------------

struct CascadeRanker {
  double weight_pointwise = 0.5;
  double weight_listwise = 0.5;

  void validate() const {
    require(weight_pointwise >= 0 && weight_listwise >= 0, "cascade weights must be >= 0");
    require(std::abs(weight_pointwise + weight_listwise - 1.0) < 1e-12, "cascade weights must sum to 1");
  }
};

struct StaticServing {};

using ServingModel = std::variant<StaticServing, TreeEnsemble, CascadeRanker>;

struct ModelSet {
  ScorerModel pointwise;
  ScorerModel policy;
  ScorerModel reward;
  ServingModel serving = StaticServing{};
  double alpha = 0.5;
};

struct Provenance {
  std::size_t cycle = 0;
  EventCounts events;
  std::string fusion = "none";
  double alpha = 0.0;
  std::vector<PPODiagnostics> ppo_rows;
};

struct PromotionRecord {
  bool promoted = false;
  double candidate_ndcg = 0.0;
  double live_ndcg = 0.0;
  std::string reason;
};

struct ModelVersion {
  std::size_t index = 0;
  ModelSet models;
  Provenance provenance;
};

using VersionPtr = std::shared_ptr<const ModelVersion>;

// Append-only list of versions with one live pointer. Readers take a
// snapshot of the live version and keep it for the whole request.
class ModelRegistry {
 public:
  explicit ModelRegistry(ModelSet bootstrap) {
    auto v = std::make_shared<ModelVersion>();
    v->index = 0;
    v->models = std::move(bootstrap);
    versions_.push_back(v);
    decisions_.push_back({true, 0.0, 0.0, "bootstrap"});
    std::atomic_store(&live_, VersionPtr(v));
  }

  std::size_t size() const { return versions_.size(); }
  const VersionPtr& at(std::size_t i) const { return versions_.at(i); }
  VersionPtr live() const { return std::atomic_load(&live_); }

  // Stores a new candidate (not live) and returns its index.
  std::size_t append(ModelSet models, Provenance prov) {
    auto v = std::make_shared<ModelVersion>();
    v->index = versions_.size();
    v->models = std::move(models);
    v->provenance = std::move(prov);
    versions_.push_back(std::move(v));
    decisions_.push_back({false, 0.0, 0.0, "pending"});
    return versions_.back()->index;
  }

  // Records the shadow decision on a candidate; promotion swaps the live
  // pointer. The version itself is never modified.
  void decide(std::size_t index, PromotionRecord record) {
    require(index < versions_.size(), "unknown version ", index);
    const bool promote = record.promoted;
    decisions_[index] = std::move(record);
    if (promote) std::atomic_store(&live_, versions_[index]);
  }

  const PromotionRecord& decision(std::size_t index) const { return decisions_.at(index); }

  void save(const std::filesystem::path& dir) const;

 private:
  std::vector<VersionPtr> versions_;
  std::vector<PromotionRecord> decisions_;
  VersionPtr live_;
};

inline nlohmann::json serving_json(const ServingModel& s) {
  if (std::holds_alternative<StaticServing>(s)) return {{"kind", "static"}};
  if (const auto* c = std::get_if<CascadeRanker>(&s))
    return {{"kind", "cascade"}, {"weight_pointwise", c->weight_pointwise}, {"weight_listwise", c->weight_listwise}};
  return {{"kind", "ensemble"}};
}

inline void ModelRegistry::save(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [](const fs::path& p, const nlohmann::json& j) {
    std::ofstream os(p, std::ios::binary);
    if (!os) fail("cannot write '", p.string(), "'");
    os << j.dump(2) << '\n';
  };
  for (const auto& v : versions_) {
    const fs::path vd = dir / ("v" + std::to_string(v->index));
    fs::create_directories(vd);
    write(vd / "pointwise.json", v->models.pointwise.to_json());
    write(vd / "policy.json", v->models.policy.to_json());
    write(vd / "reward.json", v->models.reward.to_json());
    if (const auto* e = std::get_if<TreeEnsemble>(&v->models.serving)) {
      std::ofstream os(vd / "ensemble.json", std::ios::binary);
      os << e->to_json().dump() << '\n';
    }
    const auto& p = v->provenance;
    const auto& dec = decisions_[v->index];
    nlohmann::json ppo = nlohmann::json::array();
    for (const auto& r : p.ppo_rows)
      ppo.push_back({{"loss", r.loss}, {"mean_ratio", r.mean_ratio}, {"clip_fraction", r.clip_fraction}, {"kl", r.kl}});
    write(vd / "manifest.json",
          {{"version", v->index},
           {"feature_schema_version", kFeatureSchemaVersion},
           {"model_schema_version", kModelSchemaVersion},
           {"serving", serving_json(v->models.serving)},
           {"provenance",
            {{"cycle", p.cycle},
             {"events", {{"doc", p.events.doc}, {"list", p.events.list}, {"resp", p.events.resp}}},
             {"fusion", p.fusion},
             {"alpha", p.alpha},
             {"ppo_diagnostics", ppo}}},
           {"shadow",
            {{"promoted", dec.promoted},
             {"candidate_ndcg", dec.candidate_ndcg},
             {"live_ndcg", dec.live_ndcg},
             {"reason", dec.reason}}}});
  }
  write(dir / "registry.json", {{"versions", versions_.size()}, {"live", live()->index}});
}

// --- serving ------------------------------------------------------------------

inline Vec teacher_scores(const ScorerModel& m, std::span<const Vec> rows) {
  Vec s(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) s[i] = m.forward(rows[i]);
  return s;
}

inline Vec serve_scores(const ModelSet& models, std::span<const Vec> rows) {
  return std::visit(
      [&](const auto& s) -> Vec {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, StaticServing>) {
          Vec out(rows.size());
          for (std::size_t i = 0; i < rows.size(); ++i) out[i] = rows[i][feat::kDot];
          return out;
        } else if constexpr (std::is_same_v<T, TreeEnsemble>) {
          return score_list(s, rows).scores;
        } else {
          const Vec pw = teacher_scores(models.pointwise, rows);
          const Vec lw = teacher_scores(models.policy, rows);
          Vec out(rows.size());
          for (std::size_t i = 0; i < rows.size(); ++i)
            out[i] = s.weight_pointwise * pw[i] + s.weight_listwise * lw[i];
          return out;
        }
      },
      models.serving);
}

// A ranker bound to one version snapshot.
inline Ranker version_ranker(VersionPtr v) {
  return [v = std::move(v)](const RankContext& ctx) { return serve_scores(v->models, ctx.rows); };
}

// --- evaluation on held-out pools ---------------------------------------------------

inline double slice_ndcg(std::span<const PoolContextPtr> slice, std::size_t m,
                         const std::function<Vec(const PoolContext&)>& scorer) {
  require(!slice.empty(), "empty evaluation slice");
  double s = 0.0;
  for (const auto& c : slice) {
    const Vec scores = scorer(*c);
    s += ndcg_at_m(c->utilities, top_m(scores, m));
  }
  return s / static_cast<double>(slice.size());
}

struct ShadowDecision {
  bool promote = false;
  double candidate_ndcg = 0.0;
  double live_ndcg = 0.0;
  double delta = 0.0;
  std::string reason;
};

inline ShadowDecision shadow_eval(const ModelSet& candidate, const ModelSet& live,
                                  std::span<const PoolContextPtr> slice, std::size_t m, double tolerance) {
  ShadowDecision d;
  if (slice.empty()) {
    d.reason = "empty evaluation slice";
    return d;
  }
  d.candidate_ndcg = slice_ndcg(slice, m, [&](const PoolContext& c) { return serve_scores(candidate, c.rows); });
  d.live_ndcg = slice_ndcg(slice, m, [&](const PoolContext& c) { return serve_scores(live, c.rows); });
  d.delta = d.candidate_ndcg - d.live_ndcg;
  d.promote = d.candidate_ndcg >= d.live_ndcg - tolerance;
  d.reason = d.promote ? "promoted" : "rejected: below live minus tolerance";
  return d;
}

inline const Vec& fusion_grid() {
  static const Vec grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  return grid;
}

// Grid-searches the weight w in [0,1] maximizing held-out NDCG@m of the
// ranking produced by combine(w, pointwise score, listwise score). Ties keep
// the smaller weight.
inline double tune_weight(const ModelSet& models, std::span<const PoolContextPtr> slice, std::size_t m,
                          const std::function<double(double, double, double)>& combine) {
  if (slice.empty()) return 0.5;
  std::vector<std::pair<Vec, Vec>> teacher;
  for (const auto& c : slice) teacher.emplace_back(teacher_scores(models.pointwise, c->rows),
                                                   teacher_scores(models.policy, c->rows));
  double best_w = 0.0;
  double best = -1.0;
  for (double w : fusion_grid()) {
    double s = 0.0;
    for (std::size_t i = 0; i < slice.size(); ++i) {
      const auto& [pw, lw] = teacher[i];
      Vec f(pw.size());
      for (std::size_t j = 0; j < f.size(); ++j) f[j] = combine(w, pw[j], lw[j]);
      s += ndcg_at_m(slice[i]->utilities, top_m(f, m));
    }
    if (s > best + 1e-12) {
      best = s;
      best_w = w;
    }
  }
  return best_w;
}

// --- the update cycle -----------------------------------------------------------------

inline ModelSet bootstrap_models(const CycleConfig& cfg) {
  Rng rng = make_rng(cfg.seed, "bootstrap");
  ModelSet m;
  m.pointwise = ScorerModel::random(cfg.arch, kPairFeatureDim, rng);
  m.policy = ScorerModel::random(cfg.arch, kPairFeatureDim, rng);
  m.reward = ScorerModel::random(cfg.arch, kListFeatureDim, rng);
  m.serving = StaticServing{};
  return m;
}

struct CycleInput {
  const std::deque<WindowEvent>* window = nullptr;
  std::span<const PoolContextPtr> tune_slice;
  std::size_t served_size = 5;
  std::size_t cycle_index = 0;
};

struct CycleOutput {
  ModelSet models;
  Provenance provenance;
};

inline std::vector<PolicyQuery> policy_queries(std::span<const PoolContextPtr> contexts, std::size_t cap) {
  std::vector<PolicyQuery> out;
  const std::size_t start = contexts.size() > cap ? contexts.size() - cap : 0;
  for (std::size_t i = start; i < contexts.size(); ++i)
    out.push_back({contexts[i]->rows, contexts[i]->embeddings});
  return out;
}

// Runs one cycle from the previous models. Throws on any stage failure, in
// which case the caller leaves the registry untouched.
inline CycleOutput update_cycle(const ModelSet& previous, const CycleInput& in, const CycleConfig& cfg) {
  cfg.validate();
  require(in.window != nullptr && !in.window->empty(), "update_cycle: no accumulated events");
  const CycleData data = build_cycle_data(*in.window);
  const std::uint64_t cycle_seed = derive_seed(cfg.seed, in.cycle_index);

  CycleOutput out;
  out.models = previous;
  out.provenance.cycle = in.cycle_index;
  out.provenance.events = count_events(*in.window);

  auto with_seed = [&](TrainConfig tc, const char* name) {
    tc.seed = derive_seed(cycle_seed, name);
    return tc;
  };

  // (i) teachers
  if (cfg.use_doc && !data.docs.empty()) {
    const auto filtered_docs = [&] {
      std::vector<DocExample> f;
      for (const auto& e : data.docs)
        if (e.confidence >= cfg.min_confidence && e.confidence > 0) f.push_back(e);
      return f;
    }();
    if (!filtered_docs.empty())
      out.models.pointwise =
          sgd_fit(previous.pointwise, std::span<const DocExample>(filtered_docs),
                  [](const ScorerModel& m, std::span<const DocExample> b) { return bce_loss(m, b); },
                  with_seed(cfg.pointwise, "pointwise"))
              .model;
  }

  ScorerModel listwise = previous.policy;
  if (cfg.use_list) {
    if (!data.lists.empty())
      listwise = sgd_fit(previous.policy, std::span<const ListExample>(data.lists),
                         [](const ScorerModel& m, std::span<const ListExample> b) {
                           return listnet_batch_loss(m, b, [](std::size_t k) { return positional_decay(k); });
                         },
                         with_seed(cfg.listwise, "listwise"))
                     .model;
  } else {
    Rng rng = make_rng(cycle_seed, "random-policy");
    listwise = ScorerModel::random(cfg.arch, kPairFeatureDim, rng);
  }

  // (ii) reward model and PPO alignment
  out.models.policy = listwise;
  if (cfg.use_resp) {
    if (!data.prefs.empty())
      out.models.reward =
          sgd_fit(previous.reward, std::span<const PrefExample>(data.prefs),
                  [](const ScorerModel& m, std::span<const PrefExample> b) { return bt_reward_loss(RewardModel{m}, b); },
                  with_seed(cfg.reward, "reward"))
              .model;
    const auto queries = policy_queries(data.contexts, cfg.ppo_queries);
    if (!queries.empty() && cfg.ppo_rounds > 0) {
      PPOConfig pc = cfg.ppo;
      pc.prefix_length = in.served_size;
      const auto aligned = align(listwise, reward_from_model(RewardModel{out.models.reward}), queries, pc,
                                 cfg.ppo_rounds, derive_seed(cycle_seed, "ppo"));
      out.models.policy = aligned.policy;
      for (const auto& r : aligned.rounds)
        for (const auto& s : r.steps) out.provenance.ppo_rows.push_back(s);
    }
  }

  // (iii) fusion and serving model
  if (cfg.fusion == FusionMode::kDistill) {
    const double alpha = cfg.use_doc ? tune_weight(out.models, in.tune_slice, in.served_size,
                                                   [](double a, double pw, double lw) { return fuse_targets(pw, lw, a); })
                                     : 0.0;
    out.models.alpha = alpha;
    std::vector<ListBatch> batches;
    for (const auto& c : data.contexts) {
      ListBatch b;
      b.rows = c->rows;
      const Vec pw = teacher_scores(out.models.pointwise, c->rows);
      const Vec lw = teacher_scores(out.models.policy, c->rows);
      for (std::size_t i = 0; i < pw.size(); ++i) b.targets.push_back(fuse_targets(pw[i], lw[i], alpha));
      batches.push_back(std::move(b));
    }
    out.models.serving = fit_ensemble(batches, cfg.gbdt).ensemble;
    out.provenance.fusion = "distill";
    out.provenance.alpha = alpha;
  } else {
    const double lambda = cfg.use_doc ? tune_weight(out.models, in.tune_slice, in.served_size,
                                                    [](double w, double pw, double lw) { return w * pw + (1 - w) * lw; })
                                      : 0.0;
    CascadeRanker c{lambda, 1.0 - lambda};
    c.validate();
    out.models.serving = c;
    out.models.alpha = lambda;
    out.provenance.fusion = "cascade";
    out.provenance.alpha = lambda;
  }
  return out;
}

// --- the nearline driver ------------------------------------------------------------

struct CycleLog {
  std::size_t cycle = 0;
  std::size_t version = 0;
  bool aborted = false;
  std::string error;
  ShadowDecision decision;
};

// Which held-out slice a turn belongs to, from its position on the stream clock.
enum class TurnRole { kTrain, kTune, kShadow };

inline TurnRole turn_role(std::size_t clock) {
  switch (clock % 10) {
    case 0:
      return TurnRole::kTune;
    case 5:
      return TurnRole::kShadow;
    default:
      return TurnRole::kTrain;
  }
}

class NearlineOrchestrator {
 public:
  NearlineOrchestrator(CycleConfig cfg, std::size_t served_size)
      : cfg_(std::move(cfg)),
        served_size_(served_size),
        registry_(bootstrap_models(cfg_)),
        accumulator_(cfg_.effective_threshold()) {
    cfg_.validate();
  }

  const CycleConfig& config() const { return cfg_; }
  const ModelRegistry& registry() const { return registry_; }
  const Accumulator& accumulator() const { return accumulator_; }
  const std::vector<CycleLog>& cycles() const { return cycles_; }
  VersionPtr live() const { return registry_.live(); }
  const std::deque<PoolContextPtr>& tune_slice() const { return tune_slice_; }
  const std::deque<PoolContextPtr>& shadow_slice() const { return shadow_slice_; }

  // Feeds one observed turn. Held-out turns only extend the evaluation
  // slices; training turns contribute their feedback, which may fire cycles.
  void observe_turn(std::size_t clock, const PoolContextPtr& ctx, std::span<const FeedbackEvent> events) {
    const TurnRole role = turn_role(clock);
    if (role != TurnRole::kTrain) {
      auto& slice = role == TurnRole::kTune ? tune_slice_ : shadow_slice_;
      slice.push_back(ctx);
      if (slice.size() > cfg_.slice_size) slice.pop_front();
      return;
    }
    for (const auto& e : events) {
      if (const auto* d = std::get_if<DocFeedback>(&e))
        if (d->confidence < cfg_.min_confidence) continue;
      window_.push_back({e, ctx});
      if (window_.size() > cfg_.window_events) window_.pop_front();
      const std::size_t fired = accumulator_.accumulate(1);
      for (std::size_t f = 0; f < fired; ++f) run_cycle();
    }
  }

  void observe(const TurnOutput& t, std::size_t clock) {
    std::vector<FeedbackEvent> events;
    for (const auto& d : t.docs) events.emplace_back(d);
    if (t.list) events.emplace_back(*t.list);
    if (t.pref) events.emplace_back(*t.pref);
    observe_turn(clock, make_context(t.context, t.turn.query), events);
  }

 private:
  void run_cycle() {
    CycleLog log;
    log.cycle = cycles_.size() + 1;
    const VersionPtr live = registry_.live();
    try {
      const std::vector<PoolContextPtr> tune(tune_slice_.begin(), tune_slice_.end());
      CycleInput in{&window_, tune, served_size_, log.cycle};
      CycleOutput co = update_cycle(live->models, in, cfg_);
      log.version = registry_.append(std::move(co.models), std::move(co.provenance));
      const std::vector<PoolContextPtr> shadow(shadow_slice_.begin(), shadow_slice_.end());
      log.decision = shadow_eval(registry_.at(log.version)->models, live->models, shadow, served_size_,
                                 cfg_.promote_tolerance);
      registry_.decide(log.version, {log.decision.promote, log.decision.candidate_ndcg, log.decision.live_ndcg,
                                     log.decision.reason});
    } catch (const Error& e) {
      log.aborted = true;
      log.error = e.what();
    }
    cycles_.push_back(std::move(log));
  }

  CycleConfig cfg_;
  std::size_t served_size_;
  ModelRegistry registry_;
  Accumulator accumulator_;
  std::deque<WindowEvent> window_;
  std::deque<PoolContextPtr> tune_slice_;
  std::deque<PoolContextPtr> shadow_slice_;
  std::vector<CycleLog> cycles_;
};

}  // namespace dma
