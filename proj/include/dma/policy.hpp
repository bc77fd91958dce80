#pragma once

// Plackett-Luce list policy over a candidate pool: prefix log-likelihoods,
// their score gradients, Gumbel-Top-k sampling, and exact enumeration for
// small pools.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dma/common.hpp"
#include "dma/rng.hpp"

namespace dma {

using Permutation = std::vector<std::size_t>;

struct RankedSample {
  Permutation permutation;  // full order over pool indices
  Permutation prefix;       // first m entries
  double logprob = 0.0;     // log-probability of the prefix
};

namespace detail {

inline void check_prefix(std::size_t k, std::span<const std::size_t> prefix) {
  require(prefix.size() <= k, "prefix longer than pool");
  std::vector<bool> seen(k, false);
  for (std::size_t i : prefix) {
    require(i < k, "prefix index ", i, " out of range for pool of ", k);
    require(!seen[i], "duplicate index ", i, " in prefix");
    seen[i] = true;
  }
}

}  // namespace detail

// sum_t [ g(pi_t) - logsumexp_{u not yet chosen} g(u) ] over the prefix.
inline double prefix_logprob(std::span<const double> scores, std::span<const std::size_t> prefix) {
  const std::size_t k = scores.size();
  detail::check_prefix(k, prefix);
  std::vector<bool> taken(k, false);
  Vec remaining;
  remaining.reserve(k);
  double lp = 0.0;
  for (std::size_t chosen : prefix) {
    remaining.clear();
    for (std::size_t u = 0; u < k; ++u)
      if (!taken[u]) remaining.push_back(scores[u]);
    lp += scores[chosen] - logsumexp(remaining);
    taken[chosen] = true;
  }
  return lp;
}

// d prefix_logprob / d scores.
inline Vec prefix_logprob_grad(std::span<const double> scores, std::span<const std::size_t> prefix) {
  const std::size_t k = scores.size();
  detail::check_prefix(k, prefix);
  std::vector<bool> taken(k, false);
  Vec grad(k, 0.0);
  Vec remaining;
  std::vector<std::size_t> idx;
  for (std::size_t chosen : prefix) {
    remaining.clear();
    idx.clear();
    for (std::size_t u = 0; u < k; ++u)
      if (!taken[u]) {
        remaining.push_back(scores[u]);
        idx.push_back(u);
      }
    const Vec p = softmax(remaining);
    for (std::size_t r = 0; r < idx.size(); ++r) grad[idx[r]] -= p[r];
    grad[chosen] += 1.0;
    taken[chosen] = true;
  }
  return grad;
}

inline constexpr double kGumbelEps = 1e-12;

inline double gumbel(Rng& rng) {
  const double u = std::clamp(uniform01(rng), kGumbelEps, 1.0 - kGumbelEps);
  return -std::log(-std::log(u));
}

// Draws a full PL permutation by perturbing scores with Gumbel(0,1) noise
// and sorting; reports the prefix of length m and its log-probability.
inline RankedSample gumbel_topk_sample(std::span<const double> scores, std::size_t m, Rng& rng) {
  const std::size_t k = scores.size();
  require(k >= 1, "cannot sample from an empty pool");
  require(m >= 1 && m <= k, "prefix length ", m, " must be in [1, ", k, "]");
  Vec keys(k);
  for (std::size_t i = 0; i < k; ++i) keys[i] = scores[i] + gumbel(rng);
  RankedSample s;
  s.permutation = rank_order(keys);
  s.prefix.assign(s.permutation.begin(), s.permutation.begin() + static_cast<std::ptrdiff_t>(m));
  s.logprob = prefix_logprob(scores, s.prefix);
  return s;
}

inline constexpr std::size_t kMaxEnumeratedPool = 6;

// Exact probability of every full permutation. Pools above 6 items refuse.
inline std::map<Permutation, double> enumerate_pl(std::span<const double> scores) {
  const std::size_t k = scores.size();
  require(k >= 1, "enumerate_pl: empty pool");
  require(k <= kMaxEnumeratedPool, "enumerate_pl: pool of ", k, " exceeds limit ", kMaxEnumeratedPool);
  std::map<Permutation, double> out;
  Permutation perm(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  do {
    out[perm] = std::exp(prefix_logprob(scores, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

// Probability that item `i` is ranked first.
inline double first_place_probability(std::span<const double> scores, std::size_t i) {
  require(i < scores.size(), "index out of range");
  return std::exp(scores[i] - logsumexp(scores));
}

}  // namespace dma
