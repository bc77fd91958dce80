#pragma once

// Feedback taxonomy records, the line-delimited event stream, and the
// confidence / exposure corrections applied before training.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dma/common.hpp"

namespace dma {

using SessionId = std::uint64_t;

struct DocFeedback {
  SessionId session = 0;
  QueryId query = 0;
  DocId doc = 0;
  int label = 0;
  double confidence = 1.0;
};

struct ListFeedback {
  SessionId session = 0;
  QueryId query = 0;
  std::vector<DocId> pool;  // exposed ranking, top first
  double list_score = 0.0;
  std::optional<Vec> item_weights;
};

struct ResponsePreference {
  SessionId session = 0;
  QueryId query = 0;
  std::vector<DocId> list_a;
  std::vector<DocId> list_b;
  int preferred_a = 0;
};

enum class FeedbackKind { kDoc, kList, kResp };

struct FeedbackRef {
  FeedbackKind kind;
  std::size_t index;  // into the matching IngestResult vector
};

struct Turn {
  QueryId query = 0;
  std::vector<DocId> pool;    // retrieved, in retrieval order
  std::vector<DocId> served;  // top-m shown
  double satisfaction = 0.0;
  // Simulator ground truth carried alongside the trace; empty for real logs.
  Vec query_embedding;
  Vec utilities;
  std::vector<FeedbackRef> feedback;
};

struct SessionTrace {
  SessionId session = 0;
  std::vector<Turn> turns;
};

struct IngestResult {
  std::vector<DocFeedback> docs;
  std::vector<ListFeedback> lists;
  std::vector<ResponsePreference> prefs;
  std::vector<SessionTrace> sessions;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  std::size_t event_count() const { return docs.size() + lists.size() + prefs.size(); }
};

// --- validation -------------------------------------------------------------

inline bool has_duplicates(const std::vector<DocId>& ids) {
  std::set<DocId> seen(ids.begin(), ids.end());
  return seen.size() != ids.size();
}

inline void validate(const DocFeedback& e) {
  require(e.label == 0 || e.label == 1, "doc label must be 0 or 1, got ", e.label);
  require(e.confidence >= 0.0 && e.confidence <= 1.0, "confidence out of [0,1]: ", e.confidence);
}

inline void validate(const ListFeedback& e) {
  require(!e.pool.empty(), "list pool is empty");
  require(!has_duplicates(e.pool), "list pool has duplicate doc ids");
  require(std::isfinite(e.list_score), "list score is not finite");
  if (e.item_weights) {
    require(e.item_weights->size() == e.pool.size(), "item_weights length ",
            e.item_weights->size(), " != pool length ", e.pool.size());
    for (double w : *e.item_weights) require(w > 0.0 && std::isfinite(w), "item weight must be > 0");
  }
}

inline void validate(const ResponsePreference& e) {
  require(!e.list_a.empty() && !e.list_b.empty(), "preference lists must be non-empty");
  require(e.list_a != e.list_b, "preference lists are identical");
  require(e.preferred_a == 0 || e.preferred_a == 1, "preferred_a must be 0 or 1");
}

inline void validate(const Turn& t) {
  require(!t.pool.empty(), "turn pool is empty");
  std::set<DocId> pool(t.pool.begin(), t.pool.end());
  for (DocId d : t.served) require(pool.count(d) == 1, "served doc ", d, " not in retrieved pool");
  require(!has_duplicates(t.served), "served list has duplicates");
  require(t.utilities.empty() || t.utilities.size() == t.pool.size(),
          "utilities length must match pool");
}

// --- JSON encoding ----------------------------------------------------------

inline nlohmann::json to_json(const DocFeedback& e) {
  return {{"type", "doc"},   {"session", e.session}, {"query", e.query},
          {"doc", e.doc},    {"label", e.label},     {"confidence", e.confidence}};
}

inline nlohmann::json to_json(const ListFeedback& e) {
  nlohmann::json j = {{"type", "list"}, {"session", e.session}, {"query", e.query},
                      {"pool", e.pool}, {"score", e.list_score}};
  if (e.item_weights) j["weights"] = *e.item_weights;
  return j;
}

inline nlohmann::json to_json(const ResponsePreference& e) {
  return {{"type", "resp"},      {"session", e.session}, {"query", e.query},
          {"list_a", e.list_a},  {"list_b", e.list_b},   {"preferred_a", e.preferred_a}};
}

inline nlohmann::json to_json(SessionId session, const Turn& t) {
  nlohmann::json j = {{"type", "turn"}, {"session", session},   {"query", t.query},
                      {"pool", t.pool}, {"served", t.served}, {"satisfaction", t.satisfaction}};
  if (!t.query_embedding.empty()) j["query_embedding"] = t.query_embedding;
  if (!t.utilities.empty()) j["utilities"] = t.utilities;
  return j;
}

// --- ingestion --------------------------------------------------------------

namespace detail {

inline int strict_binary(const nlohmann::json& v, const char* field) {
  require(v.is_number_integer() || v.is_boolean(), field, " must be an integer");
  const auto x = v.is_boolean() ? static_cast<std::int64_t>(v.get<bool>()) : v.get<std::int64_t>();
  require(x == 0 || x == 1, field, " must be 0 or 1, got ", x);
  return static_cast<int>(x);
}

}  // namespace detail

// Parses one stream line into `out`. Throws Error on any schema violation.
inline void ingest_line(const std::string& line, IngestResult& out,
                        std::map<SessionId, std::size_t>& session_index) {
  const auto j = nlohmann::json::parse(line);
  require(j.is_object(), "event is not a JSON object");
  const std::string type = j.at("type").get<std::string>();
  const SessionId session = j.at("session").get<SessionId>();
  const QueryId query = j.at("query").get<QueryId>();

  if (type == "doc") {
    DocFeedback e{session, query, j.at("doc").get<DocId>(), detail::strict_binary(j.at("label"), "label"),
                  j.at("confidence").get<double>()};
    validate(e);
    out.docs.push_back(e);
  } else if (type == "list") {
    ListFeedback e{session, query, j.at("pool").get<std::vector<DocId>>(), j.at("score").get<double>(),
                   std::nullopt};
    if (j.contains("weights") && !j["weights"].is_null()) e.item_weights = j["weights"].get<Vec>();
    validate(e);
    out.lists.push_back(std::move(e));
  } else if (type == "resp") {
    ResponsePreference e{session, query, j.at("list_a").get<std::vector<DocId>>(),
                         j.at("list_b").get<std::vector<DocId>>(),
                         detail::strict_binary(j.at("preferred_a"), "preferred_a")};
    validate(e);
    out.prefs.push_back(std::move(e));
  } else if (type == "turn") {
    Turn t;
    t.query = query;
    t.pool = j.at("pool").get<std::vector<DocId>>();
    t.served = j.at("served").get<std::vector<DocId>>();
    t.satisfaction = j.at("satisfaction").get<double>();
    if (j.contains("query_embedding")) t.query_embedding = j["query_embedding"].get<Vec>();
    if (j.contains("utilities")) t.utilities = j["utilities"].get<Vec>();
    validate(t);
    auto [it, inserted] = session_index.try_emplace(session, out.sessions.size());
    if (inserted) out.sessions.push_back(SessionTrace{session, {}});
    out.sessions[it->second].turns.push_back(std::move(t));
  } else {
    fail("unknown event type '", type, "'");
  }
}

// Attaches each feedback event to the turn with the same (session, query).
inline void link_feedback(IngestResult& r) {
  std::map<std::pair<SessionId, QueryId>, Turn*> turns;
  for (auto& s : r.sessions)
    for (auto& t : s.turns) turns[{s.session, t.query}] = &t;
  auto attach = [&](SessionId s, QueryId q, FeedbackKind k, std::size_t i) {
    auto it = turns.find({s, q});
    if (it != turns.end()) it->second->feedback.push_back({k, i});
  };
  for (std::size_t i = 0; i < r.docs.size(); ++i) attach(r.docs[i].session, r.docs[i].query, FeedbackKind::kDoc, i);
  for (std::size_t i = 0; i < r.lists.size(); ++i) attach(r.lists[i].session, r.lists[i].query, FeedbackKind::kList, i);
  for (std::size_t i = 0; i < r.prefs.size(); ++i) attach(r.prefs[i].session, r.prefs[i].query, FeedbackKind::kResp, i);
}

// Reads a line-delimited event stream. Malformed lines are counted in
// `skipped` and described in `warnings`; a stream read failure throws.
inline IngestResult ingest_events(std::istream& in) {
  IngestResult out;
  std::map<SessionId, std::size_t> session_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ingest_line(line, out, session_index);
    } catch (const std::exception& ex) {
      ++out.skipped;
      out.warnings.push_back(detail::concat("line ", line_no, ": ", ex.what()));
    }
  }
  if (in.bad()) fail("event stream read failure after line ", line_no);
  link_feedback(out);
  return out;
}

inline IngestResult ingest_events_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open event stream '", path, "'");
  return ingest_events(in);
}

// --- corrections ------------------------------------------------------------

inline constexpr double kDefaultMinConfidence = 0.5;

inline std::vector<DocFeedback> confidence_filter(std::span<const DocFeedback> events, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, "confidence threshold out of [0,1]: ", threshold);
  std::vector<DocFeedback> out;
  for (const auto& e : events)
    if (e.confidence >= threshold) out.push_back(e);
  return out;
}

// Inverse exposure propensity per rank: exposure is taken as 1/log2(1+rank),
// so the weight at rank j (1-based) is log2(1+j).
inline Vec exposure_weights(std::size_t pool_length) {
  require(pool_length >= 1, "exposure_weights needs pool_length >= 1");
  Vec w(pool_length);
  for (std::size_t j = 0; j < pool_length; ++j) w[j] = std::log2(static_cast<double>(j) + 2.0);
  return w;
}

// Positional decay delta_j = 1/log2(1+j), j from 1. Non-increasing, delta_1 = 1.
inline Vec positional_decay(std::size_t k) {
  Vec d(k);
  for (std::size_t j = 0; j < k; ++j) d[j] = 1.0 / std::log2(static_cast<double>(j) + 2.0);
  return d;
}

}  // namespace dma
