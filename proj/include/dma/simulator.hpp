#pragma once

// Synthetic corpus, drifting users, and the three feedback channels.
//
// Oracle utility of doc d for a user with unit intent vector v:
//   u(d) = <v, e_d> + topic_bonus * [topic(d) == nearest topic of v]
//          + freshness_weight * (freshness(d) - 0.5)
// The freshness weight is shared by all users and moves as a triangle
// wave in [-amplitude, amplitude] at `content_drift` per turn, so the
// value of freshness changes over the life of a stream.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>

#include "dma/common.hpp"
#include "dma/featurize.hpp"
#include "dma/feedback.hpp"
#include "dma/rng.hpp"

namespace dma {

struct SimConfig {
  std::size_t embedding_dim = 16;
  std::size_t pool_size = 20;    // k
  std::size_t served_size = 5;   // m
  double query_noise = 0.1;
  double drift_rate = 0.02;      // per-turn intent random-walk step
  double jump_probability = 0.01;
  double topic_bonus = 0.3;
  double freshness_amplitude = 0.6;
  double content_drift = 0.004;  // freshness-weight change per turn
  double click_scale = 4.0;      // +inf gives deterministic clicks u > 0
  double flip_probability = 0.1;
  double doc_feedback_probability = 1.0;
  double list_noise = 0.1;
  double preference_temperature = 1.0;
  double perturb_sigma = 1.0;    // noise on z-scored scores for the second list
  double satisfaction_threshold = 0.0;

  void validate() const {
    require(served_size >= 1 && served_size <= pool_size, "served size must be in [1, pool size]");
    require(flip_probability >= 0 && flip_probability <= 1, "flip probability must be in [0,1]");
    require(doc_feedback_probability >= 0 && doc_feedback_probability <= 1,
            "doc feedback probability must be in [0,1]");
    require(jump_probability >= 0 && jump_probability <= 1, "jump probability must be in [0,1]");
    require(list_noise >= 0 && query_noise >= 0 && drift_rate >= 0 && content_drift >= 0,
            "noise scales must be >= 0");
    require(preference_temperature > 0, "preference temperature must be > 0");
  }
};

// --- corpus -----------------------------------------------------------------

inline Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  do {
    for (double& x : v) x = normal(rng);
  } while (norm(v) == 0.0);
  normalize_in_place(v);
  return v;
}

// Unit-norm embeddings clustered around random topic centers. Doc ids are
// 1..n_docs; topics are assigned uniformly at random.
inline Corpus gen_corpus(std::size_t n_docs, std::size_t n_topics, std::uint64_t seed, std::size_t dim = 16,
                         double spread = 0.35) {
  require(n_docs >= 1, "gen_corpus: n_docs must be >= 1");
  require(n_topics >= 1, "gen_corpus: n_topics must be >= 1");
  require(dim >= 1, "gen_corpus: dim must be >= 1");
  Rng rng = make_rng(seed, "corpus");
  std::vector<Vec> centers;
  for (std::size_t t = 0; t < n_topics; ++t) centers.push_back(random_unit(rng, dim));
  std::vector<Doc> docs;
  docs.reserve(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) {
    const auto topic = static_cast<std::size_t>(rng() % n_topics);
    Vec e = centers[topic];
    for (double& x : e) x += spread * normal(rng);
    normalize_in_place(e);
    docs.push_back(Doc{static_cast<DocId>(i + 1), std::move(e), static_cast<int>(topic), uniform01(rng)});
  }
  return Corpus(std::move(docs));
}

// --- users and world ----------------------------------------------------------

struct LatentUser {
  Vec intent;
  double drift_rate = 0.02;
  double jump_probability = 0.01;
};

inline LatentUser make_user(const Corpus& corpus, const SimConfig& cfg, Rng& rng) {
  const auto& cents = corpus.centroids();
  Vec v;
  do {
    v = cents[static_cast<std::size_t>(rng() % cents.size())];
  } while (v.empty());
  for (double& x : v) x += 0.3 * normal(rng);
  normalize_in_place(v);
  return LatentUser{std::move(v), cfg.drift_rate, cfg.jump_probability};
}

inline void drift_user(LatentUser& user, const Corpus& corpus, Rng& rng) {
  if (bernoulli(rng, user.jump_probability)) {
    SimConfig c;
    c.drift_rate = user.drift_rate;
    c.jump_probability = user.jump_probability;
    user = make_user(corpus, c, rng);
    return;
  }
  if (user.drift_rate == 0.0) return;
  for (double& x : user.intent) x += user.drift_rate * normal(rng);
  normalize_in_place(user.intent);
}

// Population-level state shared by every session of a stream.
struct WorldState {
  double freshness_weight = 0.0;
  double direction = 1.0;
  std::size_t clock = 0;

  void advance(const SimConfig& cfg) {
    ++clock;
    if (cfg.content_drift == 0.0) return;
    freshness_weight += direction * cfg.content_drift;
    if (freshness_weight > cfg.freshness_amplitude) {
      freshness_weight = 2 * cfg.freshness_amplitude - freshness_weight;
      direction = -1.0;
    } else if (freshness_weight < -cfg.freshness_amplitude) {
      freshness_weight = -2 * cfg.freshness_amplitude - freshness_weight;
      direction = 1.0;
    }
  }
};

inline WorldState make_world(const SimConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed, "world");
  WorldState w;
  w.freshness_weight = uniform(rng, -cfg.freshness_amplitude, cfg.freshness_amplitude);
  w.direction = bernoulli(rng, 0.5) ? 1.0 : -1.0;
  return w;
}

struct OracleUtility {
  const LatentUser* user;
  const WorldState* world;
  const Corpus* corpus;
  const SimConfig* cfg;
  int user_topic;

  OracleUtility(const LatentUser& u, const WorldState& w, const Corpus& c, const SimConfig& sc)
      : user(&u), world(&w), corpus(&c), cfg(&sc), user_topic(c.nearest_topic(u.intent)) {}

  double operator()(const Doc& d) const {
    return dot(user->intent, d.embedding) + (d.topic == user_topic ? cfg->topic_bonus : 0.0) +
           world->freshness_weight * (d.freshness - 0.5);
  }

  double operator()(DocId id) const { return (*this)(corpus->at(id)); }
};

// U(D) = sum_j delta_j u(d_j) over the served prefix.
inline double list_utility(std::span<const double> utilities_in_order) {
  const Vec decay = positional_decay(utilities_in_order.size());
  double s = 0.0;
  for (std::size_t j = 0; j < decay.size(); ++j) s += decay[j] * utilities_in_order[j];
  return s;
}

inline double preference_probability(double u_a, double u_b, double temperature) {
  return sigmoid((u_a - u_b) / temperature);
}

// --- rankers ------------------------------------------------------------------

// What a ranker sees for one turn. `oracle_utilities` is ground truth and is
// only read by the oracle ranker.
struct RankContext {
  Vec query;
  std::vector<DocId> pool;
  std::vector<Vec> rows;
  std::vector<Vec> embeddings;
  Vec oracle_utilities;
};

// Returns one score per pool item; higher is better.
using Ranker = std::function<Vec(const RankContext&)>;

inline Ranker static_ranker() {
  return [](const RankContext& ctx) {
    Vec s(ctx.rows.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = ctx.rows[i][feat::kDot];
    return s;
  };
}

inline Ranker oracle_ranker() {
  return [](const RankContext& ctx) { return ctx.oracle_utilities; };
}

inline std::vector<std::size_t> top_m(std::span<const double> scores, std::size_t m) {
  auto order = rank_order(scores);
  order.resize(std::min(m, order.size()));
  return order;
}

// --- one turn -----------------------------------------------------------------

struct TurnOutput {
  SessionId session = 0;
  std::size_t turn_index = 0;
  Turn turn;
  RankContext context;
  std::vector<std::size_t> served_index;  // pool indices, top first
  std::vector<DocFeedback> docs;
  std::optional<ListFeedback> list;
  std::optional<ResponsePreference> pref;
  double preference_probability = 0.5;
};

inline QueryId make_query_id(SessionId session, std::size_t turn) {
  return (static_cast<QueryId>(session) << 20) | static_cast<QueryId>(turn);
}

// Per-turn random substreams, so that the randomness of one turn does not
// depend on what earlier turns served.
struct TurnRngs {
  Rng query;
  Rng feedback;
  Rng preference;
  Rng drift;

  TurnRngs(std::uint64_t seed, SessionId session, std::size_t turn) : TurnRngs(derive_seed(derive_seed(seed, session), turn)) {}

  explicit TurnRngs(std::uint64_t turn_seed)
      : query(make_rng(turn_seed, "query")),
        feedback(make_rng(turn_seed, "feedback")),
        preference(make_rng(turn_seed, "preference")),
        drift(make_rng(turn_seed, "drift")) {}
};

// Runs one turn: noisy query, top-k retrieval, ranking, feedback on all
// three channels. The user then drifts.
inline TurnOutput step_session(LatentUser& user, const WorldState& world, const Corpus& corpus, const Ranker& ranker,
                               const SimConfig& cfg, TurnRngs& rngs, SessionId session, std::size_t turn_index,
                               const Ranker* second_ranker = nullptr) {
  cfg.validate();
  require(cfg.pool_size <= corpus.size(), "pool size ", cfg.pool_size, " exceeds corpus size ", corpus.size());
  TurnOutput out;
  out.session = session;
  out.turn_index = turn_index;

  RankContext& ctx = out.context;
  ctx.query = user.intent;
  for (double& x : ctx.query) x += cfg.query_noise * normal(rngs.query);
  ctx.pool = corpus.retrieve(ctx.query, cfg.pool_size);
  ctx.rows = pool_features(corpus, ctx.query, ctx.pool);
  const OracleUtility oracle(user, world, corpus, cfg);
  for (DocId id : ctx.pool) {
    ctx.embeddings.push_back(corpus.at(id).embedding);
    ctx.oracle_utilities.push_back(oracle(id));
  }

  const Vec scores = ranker(ctx);
  require(scores.size() == ctx.pool.size(), "ranker returned ", scores.size(), " scores for ", ctx.pool.size(),
          " candidates");
  out.served_index = top_m(scores, cfg.served_size);

  Turn& t = out.turn;
  t.query = make_query_id(session, turn_index);
  t.pool = ctx.pool;
  Vec served_u;
  for (std::size_t i : out.served_index) {
    t.served.push_back(ctx.pool[i]);
    served_u.push_back(ctx.oracle_utilities[i]);
  }
  const double u_served = list_utility(served_u);
  t.satisfaction = u_served;
  t.query_embedding = ctx.query;
  t.utilities = ctx.oracle_utilities;

  // document level
  for (std::size_t j = 0; j < out.served_index.size(); ++j) {
    if (!bernoulli(rngs.feedback, cfg.doc_feedback_probability)) continue;
    const double u = served_u[j];
    int label;
    if (std::isinf(cfg.click_scale))
      label = u > 0 ? 1 : 0;
    else
      label = bernoulli(rngs.feedback, sigmoid(u * cfg.click_scale)) ? 1 : 0;
    if (bernoulli(rngs.feedback, cfg.flip_probability)) label = 1 - label;
    out.docs.push_back(DocFeedback{session, t.query, t.served[j], label, 1.0 - cfg.flip_probability});
  }

  // list level
  ListFeedback lf{session, t.query, t.served, u_served + cfg.list_noise * normal(rngs.feedback),
                  exposure_weights(t.served.size())};
  out.list = std::move(lf);

  // response level: a second list from a perturbed ranker
  Vec alt = second_ranker ? (*second_ranker)(ctx) : scores;
  {
    const double mu = mean(alt);
    const double sd = stddev(alt);
    for (double& s : alt) s = (sd > 0 ? (s - mu) / sd : 0.0) + cfg.perturb_sigma * normal(rngs.preference);
  }
  const auto alt_index = top_m(alt, cfg.served_size);
  std::vector<DocId> list_b;
  Vec alt_u;
  for (std::size_t i : alt_index) {
    list_b.push_back(ctx.pool[i]);
    alt_u.push_back(ctx.oracle_utilities[i]);
  }
  out.preference_probability = preference_probability(u_served, list_utility(alt_u), cfg.preference_temperature);
  const bool a_wins = bernoulli(rngs.preference, out.preference_probability);
  if (list_b != t.served) out.pref = ResponsePreference{session, t.query, t.served, list_b, a_wins ? 1 : 0};

  drift_user(user, corpus, rngs.drift);
  return out;
}

// --- evaluation -----------------------------------------------------------------

// NDCG@m with gains max(u, 0) and discount 1/log2(1+rank). A pool without
// any positive gain scores 1.
inline double ndcg_at_m(std::span<const double> pool_utilities, std::span<const std::size_t> served_index) {
  const std::size_t m = served_index.size();
  const Vec decay = positional_decay(m);
  double dcg = 0.0;
  for (std::size_t j = 0; j < m; ++j) dcg += decay[j] * std::max(0.0, pool_utilities[served_index[j]]);
  Vec sorted(pool_utilities.begin(), pool_utilities.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t j = 0; j < m && j < sorted.size(); ++j) idcg += decay[j] * std::max(0.0, sorted[j]);
  return idcg > 0 ? dcg / idcg : 1.0;
}

inline std::vector<std::size_t> served_indices(const Turn& t) {
  std::vector<std::size_t> out;
  for (DocId d : t.served) {
    auto it = std::find(t.pool.begin(), t.pool.end(), d);
    require(it != t.pool.end(), "served doc not in pool");
    out.push_back(static_cast<std::size_t>(it - t.pool.begin()));
  }
  return out;
}

struct EvalMetrics {
  double ndcg = 0.0;
  double mean_utility = 0.0;
  double satisfaction = 0.0;
  std::size_t turns = 0;
};

inline EvalMetrics evaluate(std::span<const SessionTrace> traces, double satisfaction_threshold) {
  EvalMetrics m;
  for (const auto& s : traces)
    for (const auto& t : s.turns) {
      require(t.utilities.size() == t.pool.size(), "evaluate: turn lacks oracle utilities");
      const auto idx = served_indices(t);
      Vec u;
      for (std::size_t i : idx) u.push_back(t.utilities[i]);
      const double lu = list_utility(u);
      m.ndcg += ndcg_at_m(t.utilities, idx);
      m.mean_utility += lu;
      m.satisfaction += lu >= satisfaction_threshold ? 1.0 : 0.0;
      ++m.turns;
    }
  if (m.turns > 0) {
    const double n = static_cast<double>(m.turns);
    m.ndcg /= n;
    m.mean_utility /= n;
    m.satisfaction /= n;
  }
  return m;
}

// --- streams --------------------------------------------------------------------

struct StreamConfig {
  std::size_t sessions = 100;
  std::size_t turns = 10;
  std::uint64_t seed = 1;
};

// Runs sessions one after another on a shared world clock. `ranker_for`
// is asked for the ranker before every turn (so a live model can change
// mid-stream) and `sink` receives every turn's output.
inline void run_stream(const Corpus& corpus, const SimConfig& cfg, const StreamConfig& sc,
                       const std::function<const Ranker&()>& ranker_for,
                       const std::function<void(TurnOutput&&)>& sink) {
  WorldState world = make_world(cfg, sc.seed);
  for (std::size_t s = 0; s < sc.sessions; ++s) {
    const SessionId sid = s + 1;
    Rng user_rng = make_rng(derive_seed(sc.seed, sid), "user");
    LatentUser user = make_user(corpus, cfg, user_rng);
    for (std::size_t t = 0; t < sc.turns; ++t) {
      TurnRngs rngs(sc.seed, sid, t);
      sink(step_session(user, world, corpus, ranker_for(), cfg, rngs, sid, t));
      world.advance(cfg);
    }
  }
}

}  // namespace dma
