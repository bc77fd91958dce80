#pragma once

// Run configuration: a TOML file merged with `key=value` overrides (the
// overrides win). Keys are dotted paths such as `cycle.window_events` or
// `cycle.gbdt.trees`; unknown keys are rejected.

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>
#include <toml.hpp>

#include "dma/experiment.hpp"

namespace dma {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  ExperimentConfig experiment{};
};

namespace detail {

template <class T>
void read_value(const toml::node& n, const std::string& key, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    auto v = n.value<bool>();
    require(v.has_value(), "config key '", key, "' must be a boolean");
    out = *v;
  } else if constexpr (std::is_integral_v<T>) {
    auto v = n.value<std::int64_t>();
    require(v.has_value() && *v >= 0, "config key '", key, "' must be a non-negative integer");
    out = static_cast<T>(*v);
  } else if constexpr (std::is_floating_point_v<T>) {
    auto v = n.value<double>();
    require(v.has_value(), "config key '", key, "' must be a number");
    out = *v;
  } else {
    auto v = n.value<std::string>();
    require(v.has_value(), "config key '", key, "' must be a string");
    out = *v;
  }
}

using Setter = std::function<void(const toml::node&, const std::string&, RunConfig&)>;

#define DMA_FIELD(expr)                                                                      \
  [](const toml::node& n, const std::string& k, RunConfig& c) { read_value(n, k, c.expr); }

inline void add_train_keys(std::map<std::string, Setter>& m, const std::string& prefix,
                           TrainConfig CycleConfig::*member) {
  m[prefix + ".learning_rate"] = [member](const toml::node& n, const std::string& k, RunConfig& c) {
    read_value(n, k, (c.experiment.cycle.*member).learning_rate);
  };
  m[prefix + ".batch_size"] = [member](const toml::node& n, const std::string& k, RunConfig& c) {
    read_value(n, k, (c.experiment.cycle.*member).batch_size);
  };
  m[prefix + ".epochs"] = [member](const toml::node& n, const std::string& k, RunConfig& c) {
    read_value(n, k, (c.experiment.cycle.*member).epochs);
  };
}

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> m;
    m["seed"] = DMA_FIELD(seed);
    m["out_dir"] = DMA_FIELD(out_dir);
    m["corpus.docs"] = DMA_FIELD(experiment.corpus_docs);
    m["corpus.topics"] = DMA_FIELD(experiment.corpus_topics);
    m["stream.sessions"] = DMA_FIELD(experiment.stream.sessions);
    m["stream.turns"] = DMA_FIELD(experiment.stream.turns);
    m["experiment.static_satisfaction_target"] = DMA_FIELD(experiment.static_satisfaction_target);

    m["sim.embedding_dim"] = DMA_FIELD(experiment.sim.embedding_dim);
    m["sim.pool_size"] = DMA_FIELD(experiment.sim.pool_size);
    m["sim.served_size"] = DMA_FIELD(experiment.sim.served_size);
    m["sim.query_noise"] = DMA_FIELD(experiment.sim.query_noise);
    m["sim.drift_rate"] = DMA_FIELD(experiment.sim.drift_rate);
    m["sim.jump_probability"] = DMA_FIELD(experiment.sim.jump_probability);
    m["sim.topic_bonus"] = DMA_FIELD(experiment.sim.topic_bonus);
    m["sim.freshness_amplitude"] = DMA_FIELD(experiment.sim.freshness_amplitude);
    m["sim.content_drift"] = DMA_FIELD(experiment.sim.content_drift);
    m["sim.click_scale"] = DMA_FIELD(experiment.sim.click_scale);
    m["sim.flip_probability"] = DMA_FIELD(experiment.sim.flip_probability);
    m["sim.doc_feedback_probability"] = DMA_FIELD(experiment.sim.doc_feedback_probability);
    m["sim.list_noise"] = DMA_FIELD(experiment.sim.list_noise);
    m["sim.preference_temperature"] = DMA_FIELD(experiment.sim.preference_temperature);
    m["sim.perturb_sigma"] = DMA_FIELD(experiment.sim.perturb_sigma);

    m["cycle.trigger_threshold"] = DMA_FIELD(experiment.cycle.trigger_threshold);
    m["cycle.batch_multiplier"] = DMA_FIELD(experiment.cycle.batch_multiplier);
    m["cycle.use_doc"] = DMA_FIELD(experiment.cycle.use_doc);
    m["cycle.use_list"] = DMA_FIELD(experiment.cycle.use_list);
    m["cycle.use_resp"] = DMA_FIELD(experiment.cycle.use_resp);
    m["cycle.min_confidence"] = DMA_FIELD(experiment.cycle.min_confidence);
    m["cycle.window_events"] = DMA_FIELD(experiment.cycle.window_events);
    m["cycle.ppo_rounds"] = DMA_FIELD(experiment.cycle.ppo_rounds);
    m["cycle.ppo_queries"] = DMA_FIELD(experiment.cycle.ppo_queries);
    m["cycle.promote_tolerance"] = DMA_FIELD(experiment.cycle.promote_tolerance);
    m["cycle.slice_size"] = DMA_FIELD(experiment.cycle.slice_size);
    m["cycle.cadence"] = [](const toml::node& n, const std::string& k, RunConfig& c) {
      std::string s;
      read_value(n, k, s);
      require(s == "nearline" || s == "batch", "cycle.cadence must be nearline or batch");
      c.experiment.cycle.cadence = s == "nearline" ? Cadence::kNearline : Cadence::kBatch;
    };
    m["cycle.fusion"] = [](const toml::node& n, const std::string& k, RunConfig& c) {
      std::string s;
      read_value(n, k, s);
      require(s == "distill" || s == "cascade", "cycle.fusion must be distill or cascade");
      c.experiment.cycle.fusion = s == "distill" ? FusionMode::kDistill : FusionMode::kCascade;
    };
    m["cycle.arch"] = [](const toml::node& n, const std::string& k, RunConfig& c) {
      std::string s;
      read_value(n, k, s);
      c.experiment.cycle.arch = arch_from_string(s);
    };
    add_train_keys(m, "cycle.pointwise", &CycleConfig::pointwise);
    add_train_keys(m, "cycle.listwise", &CycleConfig::listwise);
    add_train_keys(m, "cycle.reward", &CycleConfig::reward);

    m["cycle.ppo.clip"] = DMA_FIELD(experiment.cycle.ppo.clip);
    m["cycle.ppo.kl_coef"] = DMA_FIELD(experiment.cycle.ppo.kl_coef);
    m["cycle.ppo.epochs"] = DMA_FIELD(experiment.cycle.ppo.epochs);
    m["cycle.ppo.samples_per_query"] = DMA_FIELD(experiment.cycle.ppo.samples_per_query);
    m["cycle.ppo.kl_samples_per_query"] = DMA_FIELD(experiment.cycle.ppo.kl_samples_per_query);
    m["cycle.ppo.baseline_decay"] = DMA_FIELD(experiment.cycle.ppo.baseline_decay);
    m["cycle.ppo.learning_rate"] = DMA_FIELD(experiment.cycle.ppo.learning_rate);

    m["cycle.gbdt.trees"] = DMA_FIELD(experiment.cycle.gbdt.trees);
    m["cycle.gbdt.max_depth"] = DMA_FIELD(experiment.cycle.gbdt.max_depth);
    m["cycle.gbdt.shrinkage"] = DMA_FIELD(experiment.cycle.gbdt.shrinkage);
    m["cycle.gbdt.huber_delta"] = DMA_FIELD(experiment.cycle.gbdt.huber_delta);
    m["cycle.gbdt.max_bins"] = DMA_FIELD(experiment.cycle.gbdt.max_bins);
    m["cycle.gbdt.min_leaf"] = DMA_FIELD(experiment.cycle.gbdt.min_leaf);
    return m;
  }();
  return keys;
}

#undef DMA_FIELD

inline void apply_table(const toml::table& t, const std::string& prefix, RunConfig& cfg) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      apply_table(*sub, key, cfg);
      continue;
    }
    const auto& keys = config_keys();
    auto it = keys.find(key);
    require(it != keys.end(), "unknown config key '", key, "'");
    it->second(node, key, cfg);
  }
}

}  // namespace detail

inline toml::table parse_toml(const std::string& text, const std::string& source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    fail("config parse error in ", source, ": ", e.description());
  }
}

// Applies a TOML document on top of `cfg`.
inline void apply_toml(RunConfig& cfg, const std::string& text, const std::string& source = "<string>") {
  detail::apply_table(parse_toml(text, source), "", cfg);
  cfg.experiment.sim.validate();
  cfg.experiment.cycle.validate();
}

// Applies one `dotted.key=value` override. String values may be bare.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '", assignment, "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  try {
    (void)toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    value = nlohmann::json(value).dump();
  }
  apply_toml(cfg, key + " = " + value, "override");
}

inline RunConfig load_run_config(const std::string& path, std::span<const std::string> overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open config ", path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_toml(cfg, ss.str(), path);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"epochs", t.epochs}};
}

inline nlohmann::json to_json(const RunConfig& r) {
  const auto& e = r.experiment;
  const auto& s = e.sim;
  const auto& c = e.cycle;
  return {
      {"seed", r.seed},
      {"corpus", {{"docs", e.corpus_docs}, {"topics", e.corpus_topics}}},
      {"stream", {{"sessions", e.stream.sessions}, {"turns", e.stream.turns}}},
      {"experiment", {{"static_satisfaction_target", e.static_satisfaction_target}}},
      {"sim",
       {{"embedding_dim", s.embedding_dim},
        {"pool_size", s.pool_size},
        {"served_size", s.served_size},
        {"query_noise", s.query_noise},
        {"drift_rate", s.drift_rate},
        {"jump_probability", s.jump_probability},
        {"topic_bonus", s.topic_bonus},
        {"freshness_amplitude", s.freshness_amplitude},
        {"content_drift", s.content_drift},
        {"click_scale", s.click_scale},
        {"flip_probability", s.flip_probability},
        {"doc_feedback_probability", s.doc_feedback_probability},
        {"list_noise", s.list_noise},
        {"preference_temperature", s.preference_temperature},
        {"perturb_sigma", s.perturb_sigma}}},
      {"cycle",
       {{"trigger_threshold", c.trigger_threshold},
        {"cadence", c.cadence == Cadence::kNearline ? "nearline" : "batch"},
        {"batch_multiplier", c.batch_multiplier},
        {"use_doc", c.use_doc},
        {"use_list", c.use_list},
        {"use_resp", c.use_resp},
        {"fusion", to_string(c.fusion)},
        {"min_confidence", c.min_confidence},
        {"window_events", c.window_events},
        {"arch", to_string(c.arch)},
        {"pointwise", to_json(c.pointwise)},
        {"listwise", to_json(c.listwise)},
        {"reward", to_json(c.reward)},
        {"ppo",
         {{"clip", c.ppo.clip},
          {"kl_coef", c.ppo.kl_coef},
          {"epochs", c.ppo.epochs},
          {"samples_per_query", c.ppo.samples_per_query},
          {"kl_samples_per_query", c.ppo.kl_samples_per_query},
          {"baseline_decay", c.ppo.baseline_decay},
          {"learning_rate", c.ppo.learning_rate}}},
        {"ppo_rounds", c.ppo_rounds},
        {"ppo_queries", c.ppo_queries},
        {"gbdt",
         {{"trees", c.gbdt.trees},
          {"max_depth", c.gbdt.max_depth},
          {"shrinkage", c.gbdt.shrinkage},
          {"huber_delta", c.gbdt.huber_delta},
          {"max_bins", c.gbdt.max_bins},
          {"min_leaf", c.gbdt.min_leaf}}},
        {"promote_tolerance", c.promote_tolerance},
        {"slice_size", c.slice_size}}}};
}

}  // namespace dma
