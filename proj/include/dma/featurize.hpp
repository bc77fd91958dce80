#pragma once

// Numeric features shared by every teacher and the distilled student.
// Per-list normalization happens here so that training and serving see
// exactly the same transformation.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dma/common.hpp"

namespace dma {

inline constexpr std::size_t kPairFeatureDim = 8;
inline constexpr std::size_t kListFeatureDim = kPairFeatureDim + 3;
inline constexpr int kFeatureSchemaVersion = 1;

namespace feat {
enum PairIndex : std::size_t {
  kDot = 0,
  kCosine,
  kNegL2,
  kTopicMatch,
  kFreshness,
  kRankPrior,
  kListZDot,
  kListRankFraction,
};
}  // namespace feat

struct Doc {
  DocId id = 0;
  Vec embedding;
  int topic = 0;
  double freshness = 0.0;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Doc> docs) : docs_(std::move(docs)) { reindex(); }

  const std::vector<Doc>& docs() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  std::size_t dim() const { return docs_.empty() ? 0 : docs_.front().embedding.size(); }
  int topic_count() const { return static_cast<int>(centroids_.size()); }
  const std::vector<Vec>& centroids() const { return centroids_; }

  const Doc& at(DocId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail("unknown doc id ", id);
    return docs_[it->second];
  }
  bool contains(DocId id) const { return index_.count(id) != 0; }

  // Topic whose (unit) centroid has the largest dot product with q.
  int nearest_topic(std::span<const double> q) const {
    int best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < centroids_.size(); ++t) {
      if (centroids_[t].empty()) continue;
      const double d = dot(q, centroids_[t]);
      if (d > best_dot) {
        best_dot = d;
        best = static_cast<int>(t);
      }
    }
    return best;
  }

  // Top-k doc ids by dot product with q; ties by corpus order.
  std::vector<DocId> retrieve(std::span<const double> q, std::size_t k) const {
    require(k <= docs_.size(), "retrieval depth ", k, " exceeds corpus size ", docs_.size());
    std::vector<std::pair<double, std::size_t>> scored(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) scored[i] = {dot(q, docs_[i].embedding), i};
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first > b.first || (a.first == b.first && a.second < b.second);
                      });
    std::vector<DocId> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = docs_[scored[i].second].id;
    return out;
  }

  void save_jsonl(std::ostream& os) const {
    for (const auto& d : docs_) {
      nlohmann::json j = {{"id", d.id}, {"embedding", d.embedding}, {"topic", d.topic}, {"freshness", d.freshness}};
      os << j.dump() << '\n';
    }
  }

  void save_jsonl(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write corpus '", path, "'");
    save_jsonl(os);
  }

  static Corpus load_jsonl(std::istream& is) {
    std::vector<Doc> docs;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      docs.push_back(Doc{j.at("id").get<DocId>(), j.at("embedding").get<Vec>(), j.at("topic").get<int>(),
                         j.at("freshness").get<double>()});
    }
    return Corpus(std::move(docs));
  }

  static Corpus load_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open corpus '", path, "'");
    return load_jsonl(is);
  }

 private:
  void reindex() {
    index_.clear();
    int max_topic = -1;
    const std::size_t d = dim();
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      require(docs_[i].embedding.size() == d, "corpus embeddings must share one dimension");
      require(all_finite(docs_[i].embedding), "non-finite embedding for doc ", docs_[i].id);
      require(docs_[i].topic >= 0, "negative topic id");
      require(index_.emplace(docs_[i].id, i).second, "duplicate doc id ", docs_[i].id);
      max_topic = std::max(max_topic, docs_[i].topic);
    }
    centroids_.assign(static_cast<std::size_t>(max_topic + 1), Vec{});
    std::vector<std::size_t> counts(centroids_.size(), 0);
    for (const auto& doc : docs_) {
      auto& c = centroids_[static_cast<std::size_t>(doc.topic)];
      if (c.empty()) c.assign(d, 0.0);
      for (std::size_t k = 0; k < d; ++k) c[k] += doc.embedding[k];
      ++counts[static_cast<std::size_t>(doc.topic)];
    }
    for (auto& c : centroids_) normalize_in_place(c);
  }

  std::vector<Doc> docs_;
  std::map<DocId, std::size_t> index_;
  std::vector<Vec> centroids_;
};

namespace detail {

// Order-independent sum: the same multiset always yields the same bits.
inline double sorted_sum(Vec terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

struct PoolStats {
  double mean_dot = 0.0;
  double std_dot = 0.0;
};

inline PoolStats pool_stats(std::span<const double> query, std::span<const Vec> pool) {
  Vec dots;
  dots.reserve(pool.size());
  for (const auto& e : pool) dots.push_back(dot(query, e));
  const double n = static_cast<double>(dots.size());
  const double mu = sorted_sum(dots) / n;
  Vec sq;
  sq.reserve(dots.size());
  for (double x : dots) sq.push_back((x - mu) * (x - mu));
  return {mu, std::sqrt(sorted_sum(sq) / n)};
}

inline Vec pair_features_with_stats(std::span<const double> q, int query_topic, const Doc& doc,
                                    const PoolStats& stats, std::size_t rank, std::size_t pool_size) {
  const auto& d = doc.embedding;
  require(q.size() == d.size(), "dimension mismatch: query ", q.size(), " vs doc ", d.size());
  Vec f(kPairFeatureDim);
  const double dp = dot(q, d);
  const double nq = norm(q);
  const double nd = norm(d);
  double l2 = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) l2 += (q[i] - d[i]) * (q[i] - d[i]);
  f[feat::kDot] = dp;
  f[feat::kCosine] = (nq > 0 && nd > 0) ? dp / (nq * nd) : 0.0;
  f[feat::kNegL2] = -std::sqrt(l2);
  f[feat::kTopicMatch] = doc.topic == query_topic ? 1.0 : 0.0;
  f[feat::kFreshness] = doc.freshness;
  f[feat::kRankPrior] = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  f[feat::kListZDot] = stats.std_dot > 0 ? (dp - stats.mean_dot) / stats.std_dot : 0.0;
  f[feat::kListRankFraction] = static_cast<double>(rank) / static_cast<double>(pool_size);
  return f;
}

}  // namespace detail

// Features for one (query, doc) pair. `rank` is the doc's 1-based retrieval
// rank within `pool_context`; the within-list terms use population
// statistics over the pool, so the result does not depend on pool order.
inline Vec pair_features(std::span<const double> query, int query_topic, const Doc& doc,
                         std::span<const Vec> pool_context, std::size_t rank) {
  require(!pool_context.empty(), "pool_context must be non-empty");
  require(rank >= 1 && rank <= pool_context.size(), "rank ", rank, " outside pool of size ",
          pool_context.size());
  for (const auto& e : pool_context)
    require(e.size() == query.size(), "dimension mismatch in pool_context");
  return detail::pair_features_with_stats(query, query_topic, doc, detail::pool_stats(query, pool_context),
                                          rank, pool_context.size());
}

// Feature rows for a whole retrieved pool, in retrieval order.
inline std::vector<Vec> pool_features(const Corpus& corpus, std::span<const double> query,
                                      std::span<const DocId> pool) {
  require(!pool.empty(), "pool must be non-empty");
  std::vector<Vec> embs;
  embs.reserve(pool.size());
  for (DocId id : pool) embs.push_back(corpus.at(id).embedding);
  const auto stats = detail::pool_stats(query, embs);
  const int qt = corpus.nearest_topic(query);
  std::vector<Vec> rows;
  rows.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    rows.push_back(detail::pair_features_with_stats(query, qt, corpus.at(pool[i]), stats, i + 1, pool.size()));
  return rows;
}

// Aggregates member features of a served list (top first):
//   [0, 8)  decay-weighted mean of member pair features
//   8       max member dot product
//   9       diversity, 1 - mean pairwise cosine between member embeddings
//   10      list length fraction m / k
inline Vec list_features(std::span<const Vec> member_features, std::span<const Vec> member_embeddings,
                         std::span<const double> decay, std::size_t pool_size) {
  const std::size_t m = member_features.size();
  require(m > 0, "list_features needs a non-empty list");
  require(decay.size() == m, "decay length ", decay.size(), " != list length ", m);
  require(member_embeddings.size() == m, "embedding count must match member count");
  require(pool_size >= m, "pool_size smaller than list");
  Vec out(kListFeatureDim, 0.0);
  Vec wts(decay.begin(), decay.end());
  const double wsum = detail::sorted_sum(wts);
  require(wsum > 0, "decay weights must sum to a positive value");
  for (std::size_t f = 0; f < kPairFeatureDim; ++f) {
    Vec terms(m);
    for (std::size_t j = 0; j < m; ++j) {
      require(member_features[j].size() == kPairFeatureDim, "pair feature dimension mismatch");
      terms[j] = decay[j] * member_features[j][f];
    }
    out[f] = detail::sorted_sum(std::move(terms)) / wsum;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& mf : member_features) mx = std::max(mx, mf[feat::kDot]);
  out[kPairFeatureDim] = mx;
  double diversity = 0.0;
  if (m > 1) {
    Vec cosines;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) {
        const double na = norm(member_embeddings[a]);
        const double nb = norm(member_embeddings[b]);
        cosines.push_back(na > 0 && nb > 0 ? dot(member_embeddings[a], member_embeddings[b]) / (na * nb) : 0.0);
      }
    diversity = 1.0 - detail::sorted_sum(cosines) / static_cast<double>(cosines.size());
  }
  out[kPairFeatureDim + 1] = diversity;
  out[kPairFeatureDim + 2] = static_cast<double>(m) / static_cast<double>(pool_size);
  return out;
}

// List features for a prefix of a featurized pool, given as pool indices.
inline Vec prefix_list_features(std::span<const Vec> pool_rows, std::span<const Vec> pool_embeddings,
                                std::span<const std::size_t> prefix, std::span<const double> decay) {
  std::vector<Vec> rows;
  std::vector<Vec> embs;
  rows.reserve(prefix.size());
  embs.reserve(prefix.size());
  for (std::size_t i : prefix) {
    require(i < pool_rows.size(), "prefix index out of range");
    rows.push_back(pool_rows[i]);
    embs.push_back(pool_embeddings[i]);
  }
  return list_features(rows, embs, decay.subspan(0, prefix.size()), pool_rows.size());
}

}  // namespace dma
