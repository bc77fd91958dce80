#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dma/dma.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "TOML config file");
  app->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "global seed");
}

dma::RunConfig run_config(const Common& c) {
  dma::RunConfig rc = dma::load_run_config(c.config, c.overrides);
  rc.seed = c.seed;
  return rc;
}

std::vector<std::string> config_inputs(const Common& c, std::vector<std::string> more = {}) {
  if (!c.config.empty()) more.insert(more.begin(), c.config);
  return more;
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

struct LoadedLog {
  dma::Corpus corpus;
  dma::IngestResult log;
};

LoadedLog load_log(const std::string& corpus_path, const std::string& events_path) {
  LoadedLog l{dma::Corpus::load_jsonl(corpus_path), dma::ingest_events_file(events_path)};
  for (const auto& w : l.log.warnings) std::cerr << "warning: " << w << "\n";
  return l;
}

// --- simulate ---------------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::string corpus, ranker = "static", out, metrics;
  std::size_t sessions = 100, turns = 10, docs = 2000, topics = 8;
  bool generate = false;
};

int simulate(const SimulateArgs& a) {
  dma::RunConfig rc = run_config(a.common);
  const auto& sim = rc.experiment.sim;
  if (a.generate)
    dma::gen_corpus(a.docs, a.topics, dma::derive_seed(a.common.seed, "corpus"), sim.embedding_dim)
        .save_jsonl(a.corpus);
  const dma::Corpus corpus = dma::Corpus::load_jsonl(a.corpus);

  dma::Ranker ranker;
  if (a.ranker == "static") {
    ranker = dma::static_ranker();
  } else if (a.ranker == "oracle") {
    ranker = dma::oracle_ranker();
  } else {
    auto ens = std::make_shared<const dma::TreeEnsemble>(dma::TreeEnsemble::load(a.ranker));
    ranker = [ens](const dma::RankContext& c) { return dma::score_list(*ens, c.rows).scores; };
  }

  std::ostringstream events;
  std::vector<std::vector<dma::CsvWriter::Cell>> rows;
  dma::run_stream(
      corpus, sim, {a.sessions, a.turns, a.common.seed}, [&]() -> const dma::Ranker& { return ranker; },
      [&](dma::TurnOutput&& t) {
        events << dma::to_json(t.session, t.turn).dump() << "\n";
        for (const auto& d : t.docs) events << dma::to_json(d).dump() << "\n";
        if (t.list) events << dma::to_json(*t.list).dump() << "\n";
        if (t.pref) events << dma::to_json(*t.pref).dump() << "\n";
        rows.push_back({static_cast<std::uint64_t>(t.session), static_cast<std::uint64_t>(t.turn_index),
                        t.turn.satisfaction, dma::ndcg_at_m(t.context.oracle_utilities, t.served_index),
                        static_cast<std::uint64_t>(t.docs.size()), static_cast<std::uint64_t>(t.pref ? 1 : 0)});
      });
  dma::write_text(a.out, events.str());
  dma::write_csv(a.metrics.empty() ? sibling(a.out, ".metrics.csv") : a.metrics,
                 {"session", "turn", "list_utility", "ndcg", "doc_events", "resp_events"}, rows);
  return 0;
}

// --- train ------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string stage, events, corpus, out, metrics, init, arch = "linear";
  double learning_rate = 0.05, min_confidence = dma::kDefaultMinConfidence;
  std::size_t epochs = 10, batch = 32, hidden = dma::kDefaultHidden;
};

int train(const TrainArgs& a) {
  const LoadedLog l = load_log(a.corpus, a.events);
  const auto window = dma::window_from_log(l.log, l.corpus, a.min_confidence);
  const dma::CycleData data = dma::build_cycle_data(window);
  dma::TrainConfig tc{a.learning_rate, a.batch, a.epochs, dma::derive_seed(a.common.seed, "train/" + a.stage)};

  const bool reward = a.stage == "reward";
  const std::size_t dim = reward ? dma::kListFeatureDim : dma::kPairFeatureDim;
  dma::ScorerModel init;
  if (!a.init.empty()) {
    init = dma::ScorerModel::load(a.init);
  } else {
    dma::Rng rng = dma::make_rng(a.common.seed, "init/" + a.stage);
    init = dma::ScorerModel::random(dma::arch_from_string(a.arch), dim, rng, a.hidden);
  }

  dma::FitResult fit;
  if (a.stage == "pointwise") {
    fit = dma::sgd_fit(init, std::span<const dma::DocExample>(data.docs),
                       [](const dma::ScorerModel& m, std::span<const dma::DocExample> b) { return dma::bce_loss(m, b); },
                       tc);
  } else if (a.stage == "listwise") {
    fit = dma::sgd_fit(init, std::span<const dma::ListExample>(data.lists),
                       [](const dma::ScorerModel& m, std::span<const dma::ListExample> b) {
                         return dma::listnet_batch_loss(m, b, [](std::size_t k) { return dma::positional_decay(k); });
                       },
                       tc);
  } else if (reward) {
    fit = dma::sgd_fit(init, std::span<const dma::PrefExample>(data.prefs),
                       [](const dma::ScorerModel& m, std::span<const dma::PrefExample> b) {
                         return dma::bt_reward_loss(dma::RewardModel{m}, b);
                       },
                       tc);
  } else {
    dma::fail("unknown stage '", a.stage, "'");
  }
  fit.model.save(a.out);
  std::vector<std::vector<dma::CsvWriter::Cell>> rows;
  for (std::size_t e = 0; e < fit.loss_trace.size(); ++e)
    rows.push_back({a.stage, static_cast<std::uint64_t>(e + 1), fit.loss_trace[e]});
  dma::write_csv(a.metrics.empty() ? sibling(a.out, ".loss.csv") : a.metrics, {"stage", "epoch", "loss"}, rows);
  return 0;
}

// --- align ------------------------------------------------------------------------

struct AlignArgs {
  Common common;
  std::string policy, reward, events, corpus, out, metrics;
  std::size_t rounds = 10, queries = 32;
};

int align(const AlignArgs& a) {
  dma::RunConfig rc = run_config(a.common);
  const LoadedLog l = load_log(a.corpus, a.events);
  const auto window = dma::window_from_log(l.log, l.corpus);
  const dma::CycleData data = dma::build_cycle_data(window);
  const auto queries = dma::policy_queries(data.contexts, a.queries);
  dma::require(!queries.empty(), "no turns with pools in the event stream");
  const dma::RewardModel rm{dma::ScorerModel::load(a.reward)};
  dma::PPOConfig pc = rc.experiment.cycle.ppo;
  pc.prefix_length = rc.experiment.sim.served_size;
  const auto res = dma::align(dma::ScorerModel::load(a.policy), dma::reward_from_model(rm), queries, pc, a.rounds,
                              dma::derive_seed(a.common.seed, "align"));
  res.policy.save(a.out);
  std::vector<std::vector<dma::CsvWriter::Cell>> rows;
  for (std::size_t r = 0; r < res.rounds.size(); ++r) {
    const auto& rr = res.rounds[r];
    const dma::PPODiagnostics last = rr.steps.empty() ? dma::PPODiagnostics{} : rr.steps.back();
    rows.push_back({static_cast<std::uint64_t>(r + 1), rr.mean_reward, last.kl, last.clip_fraction, last.loss});
  }
  dma::write_csv(a.metrics.empty() ? sibling(a.out, ".ppo.csv") : a.metrics,
                 {"round", "mean_reward", "kl", "clip_fraction", "loss"}, rows);
  return 0;
}

// --- distill ----------------------------------------------------------------------

struct DistillArgs {
  Common common;
  std::string pointwise, policy, events, corpus, out, metrics;
  double alpha = 0.5;
  std::size_t trees = 200;
};

int distill(const DistillArgs& a) {
  dma::RunConfig rc = run_config(a.common);
  const LoadedLog l = load_log(a.corpus, a.events);
  const auto pw = dma::ScorerModel::load(a.pointwise);
  const auto lw = dma::ScorerModel::load(a.policy);
  std::vector<dma::ListBatch> batches;
  for (const auto& lt : dma::logged_turns(l.log, l.corpus)) {
    dma::ListBatch b;
    b.rows = lt.context->rows;
    for (const auto& r : b.rows) b.targets.push_back(dma::fuse_targets(pw.forward(r), lw.forward(r), a.alpha));
    batches.push_back(std::move(b));
  }
  dma::GbdtConfig gc = rc.experiment.cycle.gbdt;
  gc.trees = a.trees;
  const auto fit = dma::fit_ensemble(batches, gc);
  fit.ensemble.save(a.out);
  std::vector<std::vector<dma::CsvWriter::Cell>> rows;
  for (std::size_t t = 0; t < fit.loss_trace.size(); ++t)
    rows.push_back({static_cast<std::uint64_t>(t), fit.loss_trace[t]});
  dma::write_csv(a.metrics.empty() ? sibling(a.out, ".loss.csv") : a.metrics, {"round", "huber_loss"}, rows);
  return 0;
}

// --- run-nearline -----------------------------------------------------------------

struct NearlineArgs {
  Common common;
  std::string events, corpus, registry;
};

int run_nearline(const NearlineArgs& a) {
  dma::RunConfig rc = run_config(a.common);
  const LoadedLog l = load_log(a.corpus, a.events);
  dma::CycleConfig cc = rc.experiment.cycle;
  cc.seed = dma::derive_seed(a.common.seed, "orchestrator");
  dma::NearlineOrchestrator orch(cc, rc.experiment.sim.served_size);
  std::size_t clock = 0;
  for (const auto& lt : dma::logged_turns(l.log, l.corpus)) orch.observe_turn(clock++, lt.context, lt.events);
  orch.registry().save(a.registry);
  std::vector<std::vector<dma::CsvWriter::Cell>> rows;
  for (const auto& c : orch.cycles())
    rows.push_back({static_cast<std::uint64_t>(c.cycle), static_cast<std::uint64_t>(c.version),
                    std::string(c.aborted ? "aborted" : (c.decision.promote ? "promoted" : "rejected")),
                    c.decision.candidate_ndcg, c.decision.live_ndcg, c.aborted ? c.error : c.decision.reason});
  dma::write_csv((fs::path(a.registry) / "cycles.csv").string(),
                 {"cycle", "version", "outcome", "candidate_ndcg", "live_ndcg", "reason"}, rows);
  dma::write_json((fs::path(a.registry) / "run.json").string(),
                  dma::make_report("run-nearline", dma::to_json(rc), config_inputs(a.common, {a.corpus, a.events}),
                                   {{"turns", clock},
                                    {"cycles", orch.cycles().size()},
                                    {"live_version", orch.live()->index},
                                    {"skipped_lines", l.log.skipped}}));
  return 0;
}

// --- experiment -------------------------------------------------------------------

struct ExperimentArgs {
  Common common;
  std::string mode, out;
};

int experiment(const ExperimentArgs& a) {
  dma::RunConfig rc = run_config(a.common);
  const auto rep = dma::run_experiment(dma::experiment_mode_from_string(a.mode), rc.experiment, a.common.seed);
  dma::write_json(a.out, dma::make_report("experiment", dma::to_json(rc), config_inputs(a.common), dma::to_json(rep)));
  return 0;
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string events, out;
  double threshold = 0.0;
};

int eval(const EvalArgs& a) {
  const dma::IngestResult log = dma::ingest_events_file(a.events);
  const dma::EvalMetrics m = dma::evaluate(log.sessions, a.threshold);
  const json result = {{"ndcg", m.ndcg},
                       {"mean_utility", m.mean_utility},
                       {"satisfaction", m.satisfaction},
                       {"turns", m.turns},
                       {"satisfaction_threshold", a.threshold},
                       {"skipped_lines", log.skipped}};
  dma::write_json(a.out, dma::make_report("eval", json::object(), {a.events}, result));
  return 0;
}

// --- bench-latency ----------------------------------------------------------------

struct BenchArgs {
  Common common;
  std::string ensemble, out;
  std::size_t list_size = 100, iters = 1000, trees = 200, depth = 4;
};

int bench_latency(const BenchArgs& a) {
  dma::Rng rng = dma::make_rng(a.common.seed, "bench");
  const dma::TreeEnsemble ens = a.ensemble.empty()
                                    ? dma::random_ensemble(dma::kPairFeatureDim, a.trees, a.depth, rng)
                                    : dma::TreeEnsemble::load(a.ensemble);
  std::vector<dma::Vec> rows(a.list_size, dma::Vec(ens.feature_dim()));
  for (auto& r : rows)
    for (double& x : r) x = dma::uniform(rng, -1.0, 1.0);
  std::vector<double> ms;
  double checksum = 0.0;
  for (std::size_t i = 0; i < a.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = dma::score_list(ens, rows);
    const auto t1 = std::chrono::steady_clock::now();
    checksum += s.scores.front();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const json result = {{"trees", ens.trees().size()},
                       {"list_size", a.list_size},
                       {"iters", a.iters},
                       {"median_ms", ms[ms.size() / 2]},
                       {"p90_ms", ms[ms.size() * 9 / 10]},
                       {"checksum", checksum}};
  if (a.out.empty())
    std::cout << result.dump() << "\n";
  else
    dma::write_json(a.out, result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic memory alignment pipeline"};
  app.require_subcommand(0, 1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate sessions and feedback events");
  add_common(s, sim.common);
  s->add_option("--corpus", sim.corpus, "corpus JSONL")->required();
  s->add_flag("--generate-corpus", sim.generate, "write a synthetic corpus to --corpus first");
  s->add_option("--docs", sim.docs, "documents for --generate-corpus");
  s->add_option("--topics", sim.topics, "topics for --generate-corpus");
  s->add_option("--sessions", sim.sessions);
  s->add_option("--turns", sim.turns);
  s->add_option("--ranker", sim.ranker, "static | oracle | <ensemble.json>");
  s->add_option("--out", sim.out, "event stream output")->required();
  s->add_option("--metrics", sim.metrics, "per-turn metrics CSV");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a teacher or the reward model");
  add_common(t, tr.common);
  t->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({"pointwise", "listwise", "reward"}));
  t->add_option("--events", tr.events)->required();
  t->add_option("--corpus", tr.corpus)->required();
  t->add_option("--out", tr.out)->required();
  t->add_option("--metrics", tr.metrics, "per-epoch loss CSV");
  t->add_option("--init", tr.init, "warm-start model");
  t->add_option("--arch", tr.arch)->check(CLI::IsMember({"linear", "mlp"}));
  t->add_option("--hidden", tr.hidden);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch);
  t->add_option("--lr", tr.learning_rate);
  t->add_option("--min-confidence", tr.min_confidence);

  AlignArgs al;
  auto* a = app.add_subcommand("align", "PPO-align a list policy against a reward model");
  add_common(a, al.common);
  a->add_option("--policy", al.policy)->required();
  a->add_option("--reward", al.reward)->required();
  a->add_option("--events", al.events)->required();
  a->add_option("--corpus", al.corpus)->required();
  a->add_option("--rounds", al.rounds);
  a->add_option("--queries", al.queries, "pools sampled per round");
  a->add_option("--out", al.out)->required();
  a->add_option("--metrics", al.metrics, "per-round diagnostics CSV");

  DistillArgs di;
  auto* d = app.add_subcommand("distill", "distill fused teacher targets into a tree ensemble");
  add_common(d, di.common);
  d->add_option("--pointwise", di.pointwise)->required();
  d->add_option("--policy", di.policy)->required();
  d->add_option("--alpha", di.alpha)->check(CLI::Range(0.0, 1.0));
  d->add_option("--trees", di.trees);
  d->add_option("--events", di.events)->required();
  d->add_option("--corpus", di.corpus)->required();
  d->add_option("--out", di.out)->required();
  d->add_option("--metrics", di.metrics, "per-round loss CSV");

  NearlineArgs nl;
  auto* n = app.add_subcommand("run-nearline", "replay an event stream through the nearline loop");
  add_common(n, nl.common);
  n->add_option("--events", nl.events)->required();
  n->add_option("--corpus", nl.corpus)->required();
  n->add_option("--registry", nl.registry)->required();

  ExperimentArgs ex;
  auto* e = app.add_subcommand("experiment", "paired-arm drift experiments");
  add_common(e, ex.common);
  e->add_option("--mode", ex.mode)->required()->check(CLI::IsMember({"ab_drift", "ablation", "cadence", "fusion"}));
  e->add_option("--out", ex.out)->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "offline metrics for an event stream");
  add_common(v, ev.common);
  v->add_option("--events", ev.events)->required();
  v->add_option("--threshold", ev.threshold, "satisfaction threshold on list utility");
  v->add_option("--out", ev.out)->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench-latency", "time score_list");
  add_common(b, be.common);
  b->add_option("--ensemble", be.ensemble, "ensemble JSON; random when omitted");
  b->add_option("--trees", be.trees, "trees of the random ensemble");
  b->add_option("--depth", be.depth, "depth of the random ensemble");
  b->add_option("--list-size", be.list_size);
  b->add_option("--iters", be.iters)->check(CLI::PositiveNumber);
  b->add_option("--out", be.out);

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex);
    std::cerr << json{{"error", ex.what()}, {"kind", "usage"}}.dump() << "\n";
    std::cerr << app.help();
    return 2;
  }
  const auto* cmd = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
  if (cmd == nullptr) {
    std::cerr << app.help();
    return 2;
  }
  try {
    const std::string name = cmd->get_name();
    if (name == "simulate") return simulate(sim);
    if (name == "train") return train(tr);
    if (name == "align") return align(al);
    if (name == "distill") return distill(di);
    if (name == "run-nearline") return run_nearline(nl);
    if (name == "experiment") return experiment(ex);
    if (name == "eval") return eval(ev);
    if (name == "bench-latency") return bench_latency(be);
  } catch (const std::exception& ex) {
    std::cerr << json{{"error", ex.what()}, {"command", cmd->get_name()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
