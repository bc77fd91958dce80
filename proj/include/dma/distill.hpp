#pragma once

// Teacher fusion and the gradient-boosted tree student.
//
// The student is trained on fused soft targets with a Huber objective:
// every round fits a depth-bounded regression tree to the Huber
// pseudo-residuals (greedy variance-reduction splits over at most
// `max_bins` quantile thresholds per feature), then sets each leaf to the
// Huber-optimal constant for the residuals that fall in it.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include <json.hpp>

#include "dma/common.hpp"
#include "dma/featurize.hpp"
#include "dma/rng.hpp"

namespace dma {

// --- fusion -----------------------------------------------------------------

struct FusionConfig {
  double alpha = 0.5;
};

inline double fuse_targets(double pointwise_logit, double listwise_logit, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "fusion weight alpha must be in [0,1], got ", alpha);
  return alpha * sigmoid(pointwise_logit) + (1.0 - alpha) * sigmoid(listwise_logit);
}

// --- Huber ------------------------------------------------------------------

inline constexpr double kDefaultHuberDelta = 0.1;

inline double huber_loss(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

// Negative gradient of the Huber loss w.r.t. the prediction.
inline double huber_grad(double residual, double delta) {
  if (std::abs(residual) <= delta) return residual;
  return residual > 0 ? delta : -delta;
}

// argmin_c sum_i huber(r_i - c), by ternary search on [min r, max r].
inline double huber_location(std::span<const double> residuals, double delta, double tol = 1e-8) {
  require(!residuals.empty(), "huber_location: no residuals");
  auto loss_at = [&](double c) {
    double s = 0.0;
    for (double r : residuals) s += huber_loss(r - c, delta);
    return s;
  };
  double lo = *std::min_element(residuals.begin(), residuals.end());
  double hi = *std::max_element(residuals.begin(), residuals.end());
  while (hi - lo > tol) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (loss_at(m1) <= loss_at(m2))
      hi = m2;
    else
      lo = m1;
  }
  return 0.5 * (lo + hi);
}

// --- trees ------------------------------------------------------------------

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  std::size_t depth() const {
    std::function<std::size_t(int)> rec = [&](int i) -> std::size_t {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (n.feature < 0) return 0;
      return 1 + std::max(rec(n.left), rec(n.right));
    };
    return nodes.empty() ? 0 : rec(0);
  }
};

struct GbdtConfig {
  std::size_t trees = 200;
  std::size_t max_depth = 4;
  double shrinkage = 0.1;
  double huber_delta = kDefaultHuberDelta;
  std::size_t max_bins = 32;
  std::size_t min_leaf = 5;

  void validate() const {
    require(max_depth >= 1, "max_depth must be >= 1");
    require(shrinkage > 0 && shrinkage <= 1, "shrinkage must be in (0,1]");
    require(huber_delta > 0, "huber delta must be positive");
    require(max_bins >= 1, "max_bins must be >= 1");
    require(min_leaf >= 1, "min_leaf must be >= 1");
  }
};

class TreeEnsemble {
 public:
  TreeEnsemble() = default;
  TreeEnsemble(std::size_t feature_dim, double init, double shrinkage)
      : feature_dim_(feature_dim), init_(init), shrinkage_(shrinkage) {}

  double predict(std::span<const double> x) const {
    require(x.size() == feature_dim_, "ensemble expects ", feature_dim_, " features, got ", x.size());
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return init_ + shrinkage_ * s;
  }

  std::size_t feature_dim() const { return feature_dim_; }
  double init() const { return init_; }
  double shrinkage() const { return shrinkage_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  void add_tree(RegressionTree t) { trees_.push_back(std::move(t)); }
  int schema_version() const { return schema_version_; }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      trees.push_back(std::move(nodes));
    }
    return {{"feature_schema_version", schema_version_},
            {"feature_dim", feature_dim_},
            {"init", init_},
            {"shrinkage", shrinkage_},
            {"trees", std::move(trees)}};
  }

  // Refuses payloads built against a different feature schema.
  static TreeEnsemble from_json(const nlohmann::json& j, int expected_schema = kFeatureSchemaVersion) {
    const int v = j.at("feature_schema_version").get<int>();
    require(v == expected_schema, "ensemble feature schema version ", v, " does not match expected ",
            expected_schema);
    TreeEnsemble e(j.at("feature_dim").get<std::size_t>(), j.at("init").get<double>(),
                   j.at("shrinkage").get<double>());
    e.schema_version_ = v;
    for (const auto& tj : j.at("trees")) {
      RegressionTree t;
      for (const auto& nj : tj) {
        TreeNode n{nj.at(0).get<int>(), nj.at(1).get<double>(), nj.at(2).get<int>(), nj.at(3).get<int>(),
                   nj.at(4).get<double>()};
        require(n.feature < static_cast<int>(e.feature_dim_), "tree feature index out of range");
        if (n.feature >= 0) {
          require(n.left > 0 && n.right > 0, "internal node without children");
        }
        t.nodes.push_back(n);
      }
      require(!t.nodes.empty(), "empty tree in ensemble");
      const int count = static_cast<int>(t.nodes.size());
      for (const auto& n : t.nodes)
        if (n.feature >= 0) require(n.left < count && n.right < count, "child index out of range");
      e.trees_.push_back(std::move(t));
    }
    return e;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write ensemble '", path, "'");
    os << to_json().dump() << '\n';
  }

  static TreeEnsemble load(const std::string& path, int expected_schema = kFeatureSchemaVersion) {
    std::ifstream is(path);
    if (!is) fail("cannot open ensemble '", path, "'");
    return from_json(nlohmann::json::parse(is), expected_schema);
  }

 private:
  std::size_t feature_dim_ = 0;
  double init_ = 0.0;
  double shrinkage_ = 0.1;
  int schema_version_ = kFeatureSchemaVersion;
  std::vector<RegressionTree> trees_;
};

// Items of one query list with their fused targets.
struct ListBatch {
  std::vector<Vec> rows;
  Vec targets;
};

struct FitReport {
  TreeEnsemble ensemble;
  Vec loss_trace;  // mean training Huber loss: init, then after each round
};

namespace detail {

// Candidate split thresholds per feature: midpoints between adjacent
// distinct values at up to `max_bins` data quantiles.
inline std::vector<Vec> quantile_thresholds(const std::vector<const Vec*>& rows, std::size_t dim,
                                            std::size_t max_bins) {
  std::vector<Vec> out(dim);
  Vec vals(rows.size());
  for (std::size_t f = 0; f < dim; ++f) {
    for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = (*rows[i])[f];
    std::sort(vals.begin(), vals.end());
    Vec uniq;
    for (double v : vals)
      if (uniq.empty() || v != uniq.back()) uniq.push_back(v);
    Vec& th = out[f];
    if (uniq.size() <= 1) continue;
    if (uniq.size() - 1 <= max_bins) {
      for (std::size_t i = 0; i + 1 < uniq.size(); ++i) th.push_back(0.5 * (uniq[i] + uniq[i + 1]));
      continue;
    }
    const std::size_t n = vals.size();
    for (std::size_t q = 1; q <= max_bins; ++q) {
      const std::size_t pos = std::min(n - 1, q * n / (max_bins + 1));
      const double v = vals[pos];
      auto next = std::upper_bound(uniq.begin(), uniq.end(), v);
      if (next == uniq.end()) continue;
      const double t = 0.5 * (v + *next);
      if (th.empty() || t > th.back()) th.push_back(t);
    }
  }
  return out;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<const Vec*>& rows, const std::vector<std::vector<std::uint8_t>>& bins,
              const std::vector<Vec>& thresholds, const GbdtConfig& cfg)
      : rows_(rows), bins_(bins), thresholds_(thresholds), cfg_(cfg) {}

  // Grows a tree on pseudo-residuals `grad`; leaf values come from
  // `leaf_value(indices)`.
  RegressionTree build(const Vec& grad, const std::function<double(const std::vector<std::size_t>&)>& leaf_value) {
    RegressionTree tree;
    std::vector<std::size_t> all(rows_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    tree.nodes.emplace_back();
    grow(tree, 0, all, grad, 0, leaf_value);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    std::size_t bin = 0;
    double gain = 0.0;
  };

  Split best_split(const std::vector<std::size_t>& idx, const Vec& grad) const {
    Split best;
    double total = 0.0;
    for (std::size_t i : idx) total += grad[i];
    const double n = static_cast<double>(idx.size());
    const double parent = total * total / n;
    for (std::size_t f = 0; f < thresholds_.size(); ++f) {
      const std::size_t nb = thresholds_[f].size();
      if (nb == 0) continue;
      hist_sum_.assign(nb + 1, 0.0);
      hist_cnt_.assign(nb + 1, 0);
      const auto& fb = bins_[f];
      for (std::size_t i : idx) {
        hist_sum_[fb[i]] += grad[i];
        ++hist_cnt_[fb[i]];
      }
      double ls = 0.0;
      std::size_t lc = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        ls += hist_sum_[b];
        lc += hist_cnt_[b];
        const std::size_t rc = idx.size() - lc;
        if (lc < cfg_.min_leaf || rc < cfg_.min_leaf) continue;
        const double rs = total - ls;
        const double gain = ls * ls / static_cast<double>(lc) + rs * rs / static_cast<double>(rc) - parent;
        if (gain > best.gain + 1e-12) best = {static_cast<int>(f), b, gain};
      }
    }
    return best;
  }

  void grow(RegressionTree& tree, std::size_t node, const std::vector<std::size_t>& idx, const Vec& grad,
            std::size_t depth, const std::function<double(const std::vector<std::size_t>&)>& leaf_value) {
    Split s;
    if (depth < cfg_.max_depth && idx.size() >= 2 * cfg_.min_leaf) s = best_split(idx, grad);
    if (s.feature < 0) {
      tree.nodes[node].value = leaf_value(idx);
      return;
    }
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    const auto& fb = bins_[static_cast<std::size_t>(s.feature)];
    for (std::size_t i : idx) (fb[i] <= s.bin ? left : right).push_back(i);
    const int li = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int ri = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node].feature = s.feature;
    tree.nodes[node].threshold = thresholds_[static_cast<std::size_t>(s.feature)][s.bin];
    tree.nodes[node].left = li;
    tree.nodes[node].right = ri;
    grow(tree, static_cast<std::size_t>(li), left, grad, depth + 1, leaf_value);
    grow(tree, static_cast<std::size_t>(ri), right, grad, depth + 1, leaf_value);
  }

  const std::vector<const Vec*>& rows_;
  const std::vector<std::vector<std::uint8_t>>& bins_;
  const std::vector<Vec>& thresholds_;
  const GbdtConfig& cfg_;
  mutable Vec hist_sum_;
  mutable std::vector<std::size_t> hist_cnt_;
};

}  // namespace detail

inline FitReport fit_ensemble(std::span<const ListBatch> dataset, const GbdtConfig& cfg) {
  cfg.validate();
  require(cfg.max_bins <= 255, "max_bins must fit in one byte");
  require(!dataset.empty(), "fit_ensemble: empty dataset");
  std::vector<const Vec*> rows;
  Vec y;
  for (const auto& list : dataset) {
    require(!list.rows.empty(), "fit_ensemble: empty list batch");
    require(list.rows.size() == list.targets.size(), "fit_ensemble: rows/targets length mismatch");
    for (std::size_t i = 0; i < list.rows.size(); ++i) {
      rows.push_back(&list.rows[i]);
      y.push_back(list.targets[i]);
    }
  }
  const std::size_t dim = rows.front()->size();
  for (const Vec* r : rows) require(r->size() == dim, "fit_ensemble: inconsistent feature dimension");
  require(all_finite(y), "fit_ensemble: non-finite targets");

  const std::size_t n = rows.size();
  const double delta = cfg.huber_delta;
  const double init = huber_location(y, delta);
  FitReport out{TreeEnsemble(dim, init, cfg.shrinkage), {}};

  const auto thresholds = detail::quantile_thresholds(rows, dim, cfg.max_bins);
  std::vector<std::vector<std::uint8_t>> bins(dim, std::vector<std::uint8_t>(n));
  for (std::size_t f = 0; f < dim; ++f) {
    const Vec& th = thresholds[f];
    for (std::size_t i = 0; i < n; ++i)
      bins[f][i] = static_cast<std::uint8_t>(std::lower_bound(th.begin(), th.end(), (*rows[i])[f]) - th.begin());
  }

  Vec pred(n, init);
  auto total_loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += huber_loss(y[i] - pred[i], delta);
    return s / static_cast<double>(n);
  };
  out.loss_trace.push_back(total_loss());

  detail::TreeBuilder builder(rows, bins, thresholds, cfg);
  Vec grad(n);
  Vec leaf_res;
  auto leaf_value = [&](const std::vector<std::size_t>& idx) {
    leaf_res.clear();
    for (std::size_t i : idx) leaf_res.push_back(y[i] - pred[i]);
    const double c = huber_location(leaf_res, delta);
    double at_c = 0.0;
    double at_0 = 0.0;
    for (double r : leaf_res) {
      at_c += huber_loss(r - c, delta);
      at_0 += huber_loss(r, delta);
    }
    return at_c < at_0 ? c : 0.0;
  };

  for (std::size_t t = 0; t < cfg.trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = huber_grad(y[i] - pred[i], delta);
    RegressionTree tree = builder.build(grad, leaf_value);
    for (std::size_t i = 0; i < n; ++i) pred[i] += cfg.shrinkage * tree.predict(*rows[i]);
    const double loss = total_loss();
    const double prev = out.loss_trace.back();
    if (loss > prev + 1e-12 * std::max(1.0, std::abs(prev)))
      fail("fit_ensemble: training loss increased at round ", t, " (", prev, " -> ", loss, ")");
    out.loss_trace.push_back(loss);
    out.ensemble.add_tree(std::move(tree));
  }
  return out;
}

// --- serving ----------------------------------------------------------------

struct ScoredList {
  Vec scores;
  std::vector<std::size_t> order;  // descending score, ties by pool index
};

inline ScoredList score_list(const TreeEnsemble& ensemble, std::span<const Vec> rows) {
  ScoredList out;
  out.scores.reserve(rows.size());
  for (const auto& r : rows) out.scores.push_back(ensemble.predict(r));
  out.order = rank_order(out.scores);
  return out;
}

// Complete trees of the given depth with random splits; used for latency
// measurement where only the shape of the ensemble matters.
inline TreeEnsemble random_ensemble(std::size_t feature_dim, std::size_t trees, std::size_t depth, Rng& rng) {
  require(feature_dim >= 1, "random_ensemble needs at least one feature");
  TreeEnsemble e(feature_dim, 0.0, 0.1);
  for (std::size_t t = 0; t < trees; ++t) {
    RegressionTree tree;
    const std::size_t internal = (std::size_t{1} << depth) - 1;
    const std::size_t total = 2 * internal + 1;
    for (std::size_t i = 0; i < total; ++i) {
      TreeNode n;
      if (i < internal) {
        n.feature = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, feature_dim - 1)(rng));
        n.threshold = uniform(rng, -1.0, 1.0);
        n.left = static_cast<int>(2 * i + 1);
        n.right = static_cast<int>(2 * i + 2);
      } else {
        n.value = uniform(rng, -1.0, 1.0);
      }
      tree.nodes.push_back(n);
    }
    e.add_tree(std::move(tree));
  }
  return e;
}

// Kendall tau-a between two score vectors over the same items. Tied pairs
// count as neither concordant nor discordant.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "kendall_tau: length mismatch");
  require(a.size() >= 2, "kendall_tau needs at least 2 items");
  long long conc = 0;
  long long disc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0)
        ++conc;
      else if (s < 0)
        ++disc;
    }
  const double pairs = static_cast<double>(a.size() * (a.size() - 1) / 2);
  return static_cast<double>(conc - disc) / pairs;
}

// Kendall tau between two rankings of the same items, each given as an
// order (best first).
inline double kendall_tau_orders(std::span<const std::size_t> order_a, std::span<const std::size_t> order_b) {
  require(order_a.size() == order_b.size(), "kendall_tau: length mismatch");
  const std::size_t k = order_a.size();
  Vec ra(k);
  Vec rb(k);
  for (std::size_t p = 0; p < k; ++p) {
    require(order_a[p] < k && order_b[p] < k, "order index out of range");
    ra[order_a[p]] = -static_cast<double>(p);
    rb[order_b[p]] = -static_cast<double>(p);
  }
  return kendall_tau(ra, rb);
}

struct FidelityReport {
  Vec per_list;
  double mean = 0.0;
};

inline FidelityReport distillation_fidelity(const TreeEnsemble& ensemble, std::span<const Vec> teacher_targets,
                                            std::span<const std::vector<Vec>> held_out_lists) {
  require(teacher_targets.size() == held_out_lists.size(), "distillation_fidelity: list count mismatch");
  FidelityReport out;
  for (std::size_t l = 0; l < held_out_lists.size(); ++l) {
    const ScoredList s = score_list(ensemble, held_out_lists[l]);
    out.per_list.push_back(kendall_tau(s.scores, teacher_targets[l]));
  }
  out.mean = mean(out.per_list);
  return out;
}

}  // namespace dma
