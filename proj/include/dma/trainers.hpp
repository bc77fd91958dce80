#pragma once

// Supervised objectives for the three teachers and a plain minibatch SGD loop.

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>

#include "dma/common.hpp"
#include "dma/feedback.hpp"
#include "dma/rng.hpp"
#include "dma/scorers.hpp"

namespace dma {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0, "learning rate must be positive");
    require(batch_size >= 1, "batch size must be >= 1");
  }
};

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

// One labelled (query, doc) pair, already featurized.
struct DocExample {
  Vec features;
  int label = 0;
  double confidence = 1.0;
};

// An exposed list (top first) with its scalar list score.
struct ListExample {
  std::vector<Vec> items;
  double list_score = 0.0;
  std::optional<Vec> item_weights;
};

// Two lists' aggregate features and whether list a won.
struct PrefExample {
  Vec features_a;
  Vec features_b;
  int preferred_a = 0;
};

inline void check_decay(std::span<const double> decay) {
  require(!decay.empty(), "decay profile is empty");
  for (std::size_t j = 0; j < decay.size(); ++j) {
    require(decay[j] > 0, "decay entries must be positive");
    if (j > 0) require(decay[j] <= decay[j - 1], "decay profile must be non-increasing");
  }
}

namespace detail {

inline const double kLogFloor = std::log(kProbFloor);

// -log(max(p, floor)) given log p, and its derivative w.r.t. log p.
inline std::pair<double, double> floored_neglog(double logp) {
  if (logp > kLogFloor) return {-logp, -1.0};
  return {-kLogFloor, 0.0};
}

}  // namespace detail

// Confidence-weighted binary cross-entropy, normalized by the total weight.
inline LossGrad bce_loss(const ScorerModel& model, std::span<const DocExample> batch) {
  require(!batch.empty(), "bce_loss: batch is empty");
  double z = 0.0;
  for (const auto& e : batch) z += e.confidence;
  require(z > 0, "bce_loss: confidences sum to zero");
  LossGrad out{0.0, Vec(model.param_count(), 0.0)};
  for (const auto& e : batch) {
    if (e.confidence == 0.0) continue;
    const double f = model.forward(e.features);
    // log sigma(f) and log(1 - sigma(f)) = log sigma(-f)
    const auto [l1, d1] = detail::floored_neglog(log_sigmoid(f));
    const auto [l0, d0] = detail::floored_neglog(log_sigmoid(-f));
    const double y = static_cast<double>(e.label);
    out.loss += e.confidence * (y * l1 + (1.0 - y) * l0);
    // d log sigma(f)/df = 1 - sigma(f); d log sigma(-f)/df = -sigma(f)
    const double dldf = y * d1 * (1.0 - sigmoid(f)) + (1.0 - y) * d0 * (-sigmoid(f));
    model.accumulate_grad(e.features, e.confidence * dldf / z, out.grad);
  }
  out.loss /= z;
  return out;
}

// Target distribution over positions for a list score S: softmax(S * decay).
inline Vec listnet_target(double list_score, std::span<const double> decay) {
  Vec logits(decay.size());
  for (std::size_t j = 0; j < decay.size(); ++j) logits[j] = list_score * decay[j];
  return softmax(logits);
}

// ListNet cross-entropy for one list, given precomputed item scores.
// Returns the loss and d loss / d score.
inline std::pair<double, Vec> listnet_from_scores(std::span<const double> scores, double list_score,
                                                  std::span<const double> decay,
                                                  const std::optional<Vec>& item_weights) {
  const std::size_t k = scores.size();
  require(k >= 1, "listnet_loss: empty pool");
  require(decay.size() == k, "listnet_loss: decay length ", decay.size(), " != pool length ", k);
  check_decay(decay);
  if (item_weights) require(item_weights->size() == k, "listnet_loss: item_weights length mismatch");
  const Vec target = listnet_target(list_score, decay);
  const Vec logp = log_softmax(scores);
  Vec p(k);
  for (std::size_t j = 0; j < k; ++j) p[j] = std::exp(logp[j]);
  double loss = 0.0;
  double active_mass = 0.0;
  Vec a(k);
  Vec active(k);
  for (std::size_t j = 0; j < k; ++j) {
    a[j] = (item_weights ? (*item_weights)[j] : 1.0) * target[j];
    const auto [l, d] = detail::floored_neglog(logp[j]);
    loss += a[j] * l;
    active[j] = -d;  // 1 when the floor is inactive
    active_mass += a[j] * active[j];
  }
  Vec dscore(k);
  for (std::size_t i = 0; i < k; ++i) dscore[i] = p[i] * active_mass - a[i] * active[i];
  return {loss, dscore};
}

inline LossGrad listnet_loss(const ScorerModel& model, const ListExample& list, std::span<const double> decay) {
  require(!list.items.empty(), "listnet_loss: empty pool");
  Vec scores(list.items.size());
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = model.forward(list.items[j]);
  auto [loss, dscore] = listnet_from_scores(scores, list.list_score, decay, list.item_weights);
  LossGrad out{loss, Vec(model.param_count(), 0.0)};
  for (std::size_t j = 0; j < scores.size(); ++j) model.accumulate_grad(list.items[j], dscore[j], out.grad);
  return out;
}

// Mean ListNet loss over lists. The decay profile is taken per list length.
inline LossGrad listnet_batch_loss(const ScorerModel& model, std::span<const ListExample> batch,
                                   const std::function<Vec(std::size_t)>& decay_for) {
  require(!batch.empty(), "listnet_loss: batch is empty");
  LossGrad out{0.0, Vec(model.param_count(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& list : batch) {
    const auto lg = listnet_loss(model, list, decay_for(list.items.size()));
    out.loss += lg.loss * inv_n;
    for (std::size_t p = 0; p < out.grad.size(); ++p) out.grad[p] += lg.grad[p] * inv_n;
  }
  return out;
}

// Bradley-Terry loss on list pairs: delta = RM(a) - RM(b).
inline LossGrad bt_reward_loss(const RewardModel& rm, std::span<const PrefExample> batch) {
  require(!batch.empty(), "bt_reward_loss: batch is empty");
  LossGrad out{0.0, Vec(rm.scorer.param_count(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    const double delta = rm(e.features_a) - rm(e.features_b);
    const double y = static_cast<double>(e.preferred_a);
    const auto [l1, d1] = detail::floored_neglog(log_sigmoid(delta));
    const auto [l0, d0] = detail::floored_neglog(log_sigmoid(-delta));
    out.loss += inv_n * (y * l1 + (1.0 - y) * l0);
    const double dldd = y * d1 * (1.0 - sigmoid(delta)) + (1.0 - y) * d0 * (-sigmoid(delta));
    rm.scorer.accumulate_grad(e.features_a, inv_n * dldd, out.grad);
    rm.scorer.accumulate_grad(e.features_b, -inv_n * dldd, out.grad);
  }
  return out;
}

struct FitResult {
  ScorerModel model;
  Vec loss_trace;  // mean minibatch loss per epoch
};

// Minibatch SGD. Each epoch visits the data in a seeded shuffled order;
// the reported epoch loss is the mean of the minibatch losses seen.
template <typename Example, typename LossFn>
FitResult sgd_fit(ScorerModel model, std::span<const Example> data, LossFn&& loss_fn, const TrainConfig& cfg) {
  cfg.validate();
  require(!data.empty(), "sgd_fit: no training data");
  Rng rng = make_rng(cfg.seed, "sgd_fit");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  FitResult out{std::move(model), {}};
  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const LossGrad lg = loss_fn(out.model, std::span<const Example>(batch));
      if (!std::isfinite(lg.loss) || !all_finite(lg.grad)) fail("sgd_fit diverged at epoch ", epoch);
      auto params = out.model.params();
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= cfg.learning_rate * lg.grad[p];
      if (!all_finite(params)) fail("sgd_fit diverged at epoch ", epoch);
      epoch_loss += lg.loss;
      ++batches;
    }
    out.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
  }
  return out;
}

}  // namespace dma
