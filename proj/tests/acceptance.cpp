// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>

#include "dma/dma.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace dma;
using dma::testing::fd_gradient;
using dma::testing::random_vec;
using dma::testing::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return format_number(v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ScorerModel model_with(Arch a, std::size_t n, const Vec& p) {
  ScorerModel m(a, n, 4);
  m.set_params(p);
  return m;
}

std::vector<PolicyQuery> random_queries(Rng& rng, std::size_t n, std::size_t k, std::size_t dim) {
  std::vector<PolicyQuery> qs(n);
  for (auto& q : qs)
    for (std::size_t i = 0; i < k; ++i) {
      q.item_features.push_back(random_vec(rng, dim));
      Vec e = random_vec(rng, 3);
      normalize_in_place(e);
      q.item_embeddings.push_back(e);
    }
  return qs;
}

double first_feature_reward(const PolicyQuery& q, std::span<const std::size_t> prefix) {
  double r = 0.0;
  const Vec decay = positional_decay(prefix.size());
  for (std::size_t j = 0; j < prefix.size(); ++j) r += decay[j] * q.item_features[prefix[j]][0];
  return r;
}

// --- 1 -------------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_doc = 0.0, worst_list = 0.0, worst_rm = 0.0, worst_ppo = 0.0;
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    Rng rng = make_rng(101, to_string(arch));
    for (int trial = 0; trial < 100; ++trial) {
      const ScorerModel base(arch, 6, 4);
      const Vec p0 = random_vec(rng, base.param_count(), 0.5);
      auto with = [&](const Vec& p) { return model_with(arch, 6, p); };

      std::vector<DocExample> docs;
      for (int i = 0; i < 4; ++i) docs.push_back({random_vec(rng, 6), i % 2, uniform(rng, 0.1, 1.0)});
      worst_doc = std::max(worst_doc, relative_error(bce_loss(with(p0), docs).grad,
                                                     fd_gradient([&](const Vec& p) { return bce_loss(with(p), docs).loss; }, p0)));

      std::vector<ListExample> lists;
      for (int i = 0; i < 2; ++i) {
        ListExample l{{}, uniform(rng, -2.0, 2.0), exposure_weights(4)};
        for (int j = 0; j < 4; ++j) l.items.push_back(random_vec(rng, 6));
        lists.push_back(std::move(l));
      }
      auto decay_for = [](std::size_t k) { return positional_decay(k); };
      worst_list = std::max(
          worst_list,
          relative_error(listnet_batch_loss(with(p0), lists, decay_for).grad,
                         fd_gradient([&](const Vec& p) { return listnet_batch_loss(with(p), lists, decay_for).loss; }, p0)));

      std::vector<PrefExample> prefs;
      for (int i = 0; i < 4; ++i) prefs.push_back({random_vec(rng, 6), random_vec(rng, 6), i % 2});
      worst_rm = std::max(
          worst_rm, relative_error(bt_reward_loss(RewardModel{with(p0)}, prefs).grad,
                                   fd_gradient([&](const Vec& p) { return bt_reward_loss(RewardModel{with(p)}, prefs).loss; }, p0)));
    }

    for (int trial = 0; trial < 100; ++trial) {
      Rng prng = make_rng(derive_seed(202, static_cast<std::uint64_t>(trial)), to_string(arch));
      const auto queries = random_queries(prng, 3, 6, 4);
      const ScorerModel old_policy = ScorerModel::random(arch, 4, prng, 5);
      PPOConfig cfg;
      cfg.prefix_length = 3;
      cfg.kl_coef = 0.5;
      PPOBatch batch = sample_batch(old_policy, queries, first_feature_reward, cfg, prng);
      BaselineState baseline;
      compute_advantages(batch.episodes, baseline);
      ScorerModel moved = old_policy;
      for (double& p : moved.params()) p += 0.05 * normal(prng);
      const Vec p0(moved.params().begin(), moved.params().end());
      const Vec numeric = fd_gradient(
          [&](const Vec& p) {
            ScorerModel m = moved;
            m.set_params(p);
            return ppo_objective(m, batch, cfg, false).diag.loss;
          },
          p0);
      worst_ppo = std::max(worst_ppo, relative_error(ppo_objective(moved, batch, cfg).grad, numeric));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_doc < 1e-4 && worst_list < 1e-4 && worst_rm < 1e-4 && worst_ppo < 1e-3 && secs < 10.0;
  return {pass, "max rel err doc=" + fmt(worst_doc) + " list=" + fmt(worst_list) + " rm=" + fmt(worst_rm) +
                    " ppo=" + fmt(worst_ppo) + " time=" + fmt(secs) + "s"};
}

// --- 2 -------------------------------------------------------------------------------

Outcome closed_forms() {
  const ScorerModel zero(Arch::kLinear, 2);
  const std::vector<DocExample> doc = {{Vec{0.7, -0.2}, 1, 1.0}};
  const double bce = bce_loss(zero, doc).loss;
  const std::vector<PrefExample> pref = {{Vec{0.1, 0.2}, Vec{0.3, 0.4}, 1}};
  const double bt = bt_reward_loss(RewardModel{zero}, pref).loss;
  const double single = listnet_loss(zero, ListExample{{Vec{1.0, 1.0}}, 3.0, std::nullopt}, positional_decay(1)).loss;
  const ListExample four{{Vec{1, 0}, Vec{0, 1}, Vec{1, 1}, Vec{2, 2}}, 0.0, std::nullopt};
  const double uniform4 = listnet_loss(zero, four, positional_decay(4)).loss;
  const double ln2 = std::log(2.0);
  const bool pass = std::abs(bce - ln2) <= 1e-9 && std::abs(bt - ln2) <= 1e-9 && std::abs(single) <= 1e-12 &&
                    std::abs(uniform4 - std::log(4.0)) <= 1e-9;
  return {pass, "bce=" + fmt(bce) + " bt=" + fmt(bt) + " listnet_k1=" + fmt(single) + " listnet_k4=" + fmt(uniform4)};
}

// --- 3 -------------------------------------------------------------------------------

double frequency_deviation(const Vec& scores, std::uint64_t seed) {
  const auto exact = enumerate_pl(scores);
  std::map<Permutation, double> counts;
  Rng rng = make_rng(seed, "acceptance-gumbel");
  const int n = 200000;
  for (int i = 0; i < n; ++i) counts[gumbel_topk_sample(scores, scores.size(), rng).permutation] += 1.0;
  double worst = 0.0;
  for (const auto& [perm, p] : exact) {
    const auto it = counts.find(perm);
    worst = std::max(worst, std::abs((it == counts.end() ? 0.0 : it->second / n) - p));
  }
  return worst;
}

Outcome gumbel_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const double skewed = frequency_deviation(Vec{2.0, 1.0, 0.0, -1.0}, 31);
  const double flat = frequency_deviation(Vec{0.0, 0.0, 0.0, 0.0}, 32);
  const double secs = seconds_since(t0);
  return {skewed < 0.005 && flat < 0.005 && secs < 30.0,
          "max dev skewed=" + fmt(skewed) + " equal=" + fmt(flat) + " time=" + fmt(secs) + "s"};
}

// --- 4 -------------------------------------------------------------------------------

void ordered_subsets(std::size_t k, std::size_t m, Permutation& cur, std::vector<Permutation>& out) {
  if (cur.size() == m) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (std::find(cur.begin(), cur.end(), i) != cur.end()) continue;
    cur.push_back(i);
    ordered_subsets(k, m, cur, out);
    cur.pop_back();
  }
}

Outcome pl_normalization() {
  Rng rng = make_rng(41, "acceptance-pl");
  double worst_full = 0.0;
  double worst_prefix = 0.0;
  for (std::size_t k = 1; k <= 6; ++k) {
    const Vec s = random_vec(rng, k, 2.0);
    double total = 0.0;
    for (const auto& [perm, p] : enumerate_pl(s)) total += p;
    worst_full = std::max(worst_full, std::abs(total - 1.0));
    for (std::size_t m = 1; m <= k; ++m) {
      std::vector<Permutation> prefixes;
      Permutation cur;
      ordered_subsets(k, m, cur, prefixes);
      double sum = 0.0;
      for (const auto& p : prefixes) sum += std::exp(prefix_logprob(s, p));
      worst_prefix = std::max(worst_prefix, std::abs(sum - 1.0));
    }
  }
  return {worst_full <= 1e-12 && worst_prefix <= 1e-9,
          "max |sum-1| enumerated=" + fmt(worst_full) + " prefixes=" + fmt(worst_prefix)};
}

// --- 5 -------------------------------------------------------------------------------

Outcome ppo_sanity() {
  // identity: every ratio 1, loss = -mean advantage
  Rng rng = make_rng(51, "acceptance-ppo");
  const auto queries = random_queries(rng, 4, 6, 4);
  const ScorerModel policy = ScorerModel::random(Arch::kMlp, 4, rng, 5);
  PPOConfig cfg;
  cfg.prefix_length = 3;
  PPOBatch batch = sample_batch(policy, queries, first_feature_reward, cfg, rng);
  BaselineState baseline;
  compute_advantages(batch.episodes, baseline);
  bool ratios_one = true;
  double mean_adv = 0.0;
  for (const auto& e : batch.episodes) {
    const double lp = prefix_logprob(item_scores(policy, queries[e.query]), e.prefix);
    ratios_one = ratios_one && std::exp(lp - e.old_logprob) == 1.0;
    mean_adv += e.advantage;
  }
  mean_adv /= static_cast<double>(batch.episodes.size());
  const auto ev = ppo_objective(policy, batch, cfg);
  const bool identity = ratios_one && ev.diag.mean_ratio == 1.0 && std::abs(ev.diag.loss + mean_adv) <= 1e-12;

  // a huge KL coefficient pins the policy
  PPOConfig anchored;
  anchored.kl_coef = 1e6;
  anchored.prefix_length = 3;
  const auto pinned = align(policy, first_feature_reward, queries, anchored, 1, 52);
  double moved = 0.0;
  for (std::size_t i = 0; i < policy.param_count(); ++i)
    moved = std::max(moved, std::abs(pinned.policy.params()[i] - policy.params()[i]));

  // two documents, reward 1 when document 0 is first
  PolicyQuery q;
  q.item_features = {Vec{1.0, 0.0}, Vec{0.0, 1.0}};
  q.item_embeddings = {Vec{1.0, 0.0}, Vec{0.0, 1.0}};
  const std::vector<PolicyQuery> two = {q};
  const ListReward reward = [](const PolicyQuery&, std::span<const std::size_t> prefix) {
    return prefix[0] == 0 ? 1.0 : 0.0;
  };
  PPOConfig tc;
  tc.prefix_length = 2;
  tc.learning_rate = 0.5;
  int reached = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng srng = make_rng(seed, "ppo");
    BaselineState b{0.0, tc.baseline_decay};
    ScorerModel p(Arch::kLinear, 2);
    for (int round = 0; round < 50; ++round) {
      p = align_round(p, reward, two, tc, srng, b).policy;
      if (enumerate_pl(item_scores(p, q)).at(Permutation{0, 1}) > 0.9) {
        ++reached;
        break;
      }
    }
  }
  return {identity && moved < 1e-3 && reached >= 18,
          std::string("identity=") + (identity ? "ok" : "broken") + " kl_anchor_move=" + fmt(moved) +
              " two_doc_seeds=" + std::to_string(reached) + "/20"};
}

// --- 6 -------------------------------------------------------------------------------

struct PrefSet {
  std::vector<PrefExample> examples;
  std::vector<int> noiseless;  // 1 if list a has the higher true utility, -1 on ties
};

PrefSet simulate_preferences(const Corpus& corpus, const SimConfig& cfg, std::size_t n, std::uint64_t seed) {
  PrefSet out;
  const Ranker ranker = static_ranker();
  run_stream(corpus, cfg, StreamConfig{n * 2, 5, seed}, [&]() -> const Ranker& { return ranker; },
             [&](TurnOutput&& t) {
               if (!t.pref || out.examples.size() >= n) return;
               const PoolContextPtr ctx = make_context(t.context, t.turn.query);
               Vec ua;
               Vec ub;
               for (DocId d : t.pref->list_a) ua.push_back(ctx->utilities[ctx->index_of(d)]);
               for (DocId d : t.pref->list_b) ub.push_back(ctx->utilities[ctx->index_of(d)]);
               const double diff = list_utility(ua) - list_utility(ub);
               out.examples.push_back(
                   {list_features_for(*ctx, t.pref->list_a), list_features_for(*ctx, t.pref->list_b), t.pref->preferred_a});
               out.noiseless.push_back(diff == 0.0 ? -1 : (diff > 0 ? 1 : 0));
             });
  return out;
}

Outcome reward_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const Corpus corpus = gen_corpus(2000, 8, 61);
  SimConfig cfg;
  cfg.preference_temperature = 1.0;
  cfg.drift_rate = 0.0;
  cfg.jump_probability = 0.0;
  cfg.content_drift = 0.0;
  const PrefSet train = simulate_preferences(corpus, cfg, 5000, 62);
  const PrefSet held = simulate_preferences(corpus, cfg, 2000, 63);
  Rng rng = make_rng(64, "acceptance-rm");
  const TrainConfig tc{0.2, 16, 20, 65};
  const auto fit = sgd_fit(ScorerModel::random(Arch::kLinear, kListFeatureDim, rng),
                           std::span<const PrefExample>(train.examples),
                           [](const ScorerModel& m, std::span<const PrefExample> b) { return bt_reward_loss(RewardModel{m}, b); },
                           tc);
  const RewardModel rm{fit.model};
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < held.examples.size(); ++i) {
    if (held.noiseless[i] < 0) continue;
    const double margin = rm(held.examples[i].features_a) - rm(held.examples[i].features_b);
    ++total;
    correct += (margin > 0) == (held.noiseless[i] == 1) ? 1 : 0;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(1, total));

  // reference: the oracle's own weights applied to the same list features
  const WorldState world = make_world(cfg, 63);
  auto oracle_score = [&](const Vec& f) {
    return f[feat::kDot] + cfg.topic_bonus * f[feat::kTopicMatch] + world.freshness_weight * f[feat::kFreshness];
  };
  std::size_t oracle_correct = 0;
  for (std::size_t i = 0; i < held.examples.size(); ++i) {
    if (held.noiseless[i] < 0) continue;
    const double margin = oracle_score(held.examples[i].features_a) - oracle_score(held.examples[i].features_b);
    oracle_correct += (margin > 0) == (held.noiseless[i] == 1) ? 1 : 0;
  }
  const double ceiling = static_cast<double>(oracle_correct) / static_cast<double>(std::max<std::size_t>(1, total));
  const double secs = seconds_since(t0);
  return {train.examples.size() == 5000 && acc >= 0.90 && secs < 60.0,
          "train_prefs=" + std::to_string(train.examples.size()) + " held_out_pairs=" + std::to_string(total) +
              " accuracy=" + fmt(acc) + " (oracle weights on the same features: " + fmt(ceiling) + ") time=" +
              fmt(secs) + "s"};
}

// --- 7 -------------------------------------------------------------------------------

struct StreamData {
  std::vector<DocExample> docs;
  std::vector<ListExample> lists;
  std::vector<PoolContextPtr> contexts;
};

StreamData collect_stream(const Corpus& corpus, const SimConfig& cfg, std::size_t sessions, std::uint64_t seed) {
  StreamData d;
  const Ranker ranker = static_ranker();
  run_stream(corpus, cfg, StreamConfig{sessions, 10, seed}, [&]() -> const Ranker& { return ranker; },
             [&](TurnOutput&& t) {
               const PoolContextPtr ctx = make_context(t.context, t.turn.query);
               for (const auto& e : t.docs) d.docs.push_back({ctx->rows[ctx->index_of(e.doc)], e.label, e.confidence});
               if (t.list) {
                 ListExample le;
                 for (DocId id : t.list->pool) le.items.push_back(ctx->rows[ctx->index_of(id)]);
                 le.list_score = t.list->list_score;
                 le.item_weights = t.list->item_weights;
                 d.lists.push_back(std::move(le));
               }
               d.contexts.push_back(ctx);
             });
  return d;
}

Outcome distillation() {
  const Corpus corpus = gen_corpus(2000, 8, 71);
  const SimConfig cfg;
  const StreamData train = collect_stream(corpus, cfg, 40, 72);
  const StreamData held = collect_stream(corpus, cfg, 20, 73);
  Rng rng = make_rng(74, "acceptance-teachers");
  const ScorerModel pointwise =
      sgd_fit(ScorerModel::random(Arch::kLinear, kPairFeatureDim, rng), std::span<const DocExample>(train.docs),
              [](const ScorerModel& m, std::span<const DocExample> b) { return bce_loss(m, b); }, TrainConfig{0.1, 32, 5, 75})
          .model;
  const ScorerModel listwise =
      sgd_fit(ScorerModel::random(Arch::kLinear, kPairFeatureDim, rng), std::span<const ListExample>(train.lists),
              [](const ScorerModel& m, std::span<const ListExample> b) {
                return listnet_batch_loss(m, b, [](std::size_t k) { return positional_decay(k); });
              },
              TrainConfig{0.1, 16, 5, 76})
          .model;
  const double alpha = 0.5;
  auto fused = [&](const std::vector<Vec>& rows) {
    Vec t;
    for (const auto& r : rows) t.push_back(fuse_targets(pointwise.forward(r), listwise.forward(r), alpha));
    return t;
  };
  std::vector<ListBatch> batches;
  for (const auto& c : train.contexts) batches.push_back({c->rows, fused(c->rows)});
  const FitReport fit = fit_ensemble(batches, GbdtConfig{});
  bool monotone = true;
  for (std::size_t i = 1; i < fit.loss_trace.size(); ++i) monotone = monotone && fit.loss_trace[i] <= fit.loss_trace[i - 1];

  std::vector<Vec> targets;
  std::vector<std::vector<Vec>> lists;
  for (std::size_t i = 0; i < 200 && i < held.contexts.size(); ++i) {
    lists.push_back(held.contexts[i]->rows);
    targets.push_back(fused(held.contexts[i]->rows));
  }
  const auto fid = distillation_fidelity(fit.ensemble, targets, lists);
  const bool sized = lists.size() == 200 && lists.front().size() == 20;
  return {sized && fid.mean >= 0.85 && monotone,
          "mean kendall_tau=" + fmt(fid.mean) + " over " + std::to_string(lists.size()) + " lists of " +
              std::to_string(lists.front().size()) + "; loss non-increasing=" + (monotone ? "yes" : "no")};
}

// --- 8 -------------------------------------------------------------------------------

double median_latency_ms(std::size_t trees, std::size_t iters, std::uint64_t seed) {
  Rng rng = make_rng(seed, "acceptance-latency");
  const TreeEnsemble ens = random_ensemble(kPairFeatureDim, trees, 4, rng);
  std::vector<Vec> rows(100, Vec(kPairFeatureDim));
  for (auto& r : rows)
    for (double& x : r) x = uniform(rng, -1.0, 1.0);
  std::vector<double> ms;
  double sink = 0.0;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink += score_list(ens, rows).scores.front();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  if (!std::isfinite(sink)) fail("non-finite scores");
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

Outcome latency() {
  const double default_ms = median_latency_ms(200, 1000, 81);
  const double large_ms = median_latency_ms(10000, 50, 82);
  return {default_ms < 10.0,
          "median ms (200 trees, depth 4, 100 candidates)=" + fmt(default_ms) + "; 10000 trees (unbounded)=" +
              fmt(large_ms)};
}

// --- 9 -------------------------------------------------------------------------------

Outcome trigger() {
  Accumulator acc(500);
  const std::size_t fired = acc.accumulate(1050);
  return {fired == 2 && acc.count() == 50,
          "fired=" + std::to_string(fired) + " remainder=" + std::to_string(acc.count())};
}

// --- 10 ------------------------------------------------------------------------------

Outcome directional() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig base;
  int a = 0, d = 0, b = 0, c = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto rep = run_experiment(ExperimentMode::kAll, base, seed);
    const double full = rep.summary(ArmKind::kFull).satisfaction;
    const double stat = rep.summary(ArmKind::kStatic).satisfaction;
    const double batch = rep.summary(ArmKind::kBatch).satisfaction;
    const double no_doc = rep.summary(ArmKind::kNoDoc).satisfaction;
    const double no_list = rep.summary(ArmKind::kNoList).satisfaction;
    const double cascade = rep.summary(ArmKind::kCascade).satisfaction;
    a += full > stat ? 1 : 0;
    d += full >= batch ? 1 : 0;
    b += (full - no_list) >= (full - no_doc) ? 1 : 0;
    c += full >= cascade ? 1 : 0;
    std::cout << "  seed " << seed << ": static=" << fmt(stat) << " nearline=" << fmt(full) << " batch=" << fmt(batch)
              << " no_doc=" << fmt(no_doc) << " no_list=" << fmt(no_list)
              << " no_resp=" << fmt(rep.summary(ArmKind::kNoResp).satisfaction) << " cascade=" << fmt(cascade) << "\n";
  }
  const double secs = seconds_since(t0);
  const bool pass = a >= 9 && d >= 8 && b >= 8 && c >= 7;
  return {pass, "A nearline>static " + std::to_string(a) + "/10 (need 9); D nearline>=batch " + std::to_string(d) +
                    "/10 (need 8); B list-drop>=doc-drop " + std::to_string(b) + "/10 (need 8); C distill>=cascade " +
                    std::to_string(c) + "/10 (need 7); time=" + fmt(secs) + "s"};
}

// --- 11 ------------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path().string());
  return files;
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && " + DMA_CLI_PATH + " " + args + " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "dma_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string small = " --set stream.sessions=30 --set corpus.docs=400 --set cycle.gbdt.trees=50";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"simulate", "simulate --seed 3 --generate-corpus --docs 400 --corpus corpus.jsonl --sessions 30 --turns 10 "
                   "--out events.jsonl"},
      {"train pointwise", "train --seed 3 --stage pointwise --events events.jsonl --corpus corpus.jsonl --out pw.json"},
      {"train listwise", "train --seed 3 --stage listwise --events events.jsonl --corpus corpus.jsonl --out lw.json"},
      {"train reward", "train --seed 3 --stage reward --events events.jsonl --corpus corpus.jsonl --out rm.json"},
      {"align", "align --seed 3 --policy lw.json --reward rm.json --events events.jsonl --corpus corpus.jsonl "
                "--rounds 3 --queries 8 --out aligned.json"},
      {"distill", "distill --seed 3 --pointwise pw.json --policy aligned.json --trees 30 --events events.jsonl "
                  "--corpus corpus.jsonl --out student.json"},
      {"run-nearline", "run-nearline --seed 3 --events events.jsonl --corpus corpus.jsonl --registry registry" + small},
      {"experiment", "experiment --seed 3 --mode fusion --out experiment.json" + small},
      {"eval", "eval --events events.jsonl --threshold 1.0 --out eval.json"},
      {"bench-latency", "bench-latency --seed 3 --ensemble student.json --iters 50 --out bench.json"},
  };
  std::vector<std::string> broken;
  for (const auto& [name, args] : steps) {
    if (run_cli(dir, args) != 0) {
      broken.push_back(name + " (exit)");
      continue;
    }
    auto first = snapshot(dir);
    if (run_cli(dir, args) != 0) {
      broken.push_back(name + " (exit on rerun)");
      continue;
    }
    auto second = snapshot(dir);
    if (name == "bench-latency") {
      // wall-clock fields are measurements; everything else must match
      for (auto* files : {&first, &second}) {
        auto j = nlohmann::json::parse(files->at("bench.json"));
        j.erase("median_ms");
        j.erase("p90_ms");
        (*files)["bench.json"] = j.dump();
      }
    }
    if (first != second) {
      std::string which;
      for (const auto& [f, bytes] : first)
        if (second.count(f) == 0 || second.at(f) != bytes) which += " " + f;
      broken.push_back(name + " (differs:" + which + ")");
    }
  }
  const std::size_t outputs = snapshot(dir).size();
  fs::remove_all(dir);
  std::string detail = std::to_string(steps.size()) + " subcommand runs, " + std::to_string(outputs) +
                       " output files compared; bench-latency timing fields excluded";
  for (const auto& b : broken) detail += "; " + b;
  return {broken.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"closed-form losses", closed_forms},
      {"Plackett-Luce / Gumbel-Top-k equivalence", gumbel_equivalence},
      {"Plackett-Luce normalization", pl_normalization},
      {"PPO sanity", ppo_sanity},
      {"reward-model recovery", reward_recovery},
      {"distillation fidelity", distillation},
      {"serving latency", latency},
      {"nearline trigger arithmetic", trigger},
      {"directional simulation results", directional},
      {"CLI determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
