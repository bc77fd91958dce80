#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "dma/featurize.hpp"
#include "dma/rng.hpp"
#include "dma/simulator.hpp"

namespace dma {
namespace {

Doc make_doc(DocId id, Vec e, int topic = 0, double freshness = 0.5) { return Doc{id, std::move(e), topic, freshness}; }

TEST(PairFeatures, IdenticalUnitVectors) {
  const Vec q = {0.6, 0.8};
  const Doc d = make_doc(1, q);
  const std::vector<Vec> pool = {q};
  const Vec f = pair_features(q, 0, d, pool, 1);
  EXPECT_DOUBLE_EQ(f[feat::kDot], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::kCosine], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::kNegL2], 0.0);
  EXPECT_DOUBLE_EQ(f[feat::kTopicMatch], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::kRankPrior], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::kListRankFraction], 1.0);
}

TEST(PairFeatures, IdenticalPoolHasZeroZScore) {
  const Vec q = {1.0, 0.0, 0.0};
  const Vec e = {0.5, 0.5, 0.0};
  const std::vector<Vec> pool(4, e);
  for (std::size_t r = 1; r <= 4; ++r) EXPECT_EQ(pair_features(q, 0, make_doc(r, e), pool, r)[feat::kListZDot], 0.0);
}

TEST(PairFeatures, TwoDocZScores) {
  const Vec q = {1.0, 0.0};
  const Vec a = {0.5, 0.1};
  const Vec b = {-0.5, 0.3};
  const std::vector<Vec> pool = {a, b};
  // mean 0, population sd 0.5
  EXPECT_DOUBLE_EQ(pair_features(q, 0, make_doc(1, a), pool, 1)[feat::kListZDot], 1.0);
  EXPECT_DOUBLE_EQ(pair_features(q, 0, make_doc(2, b), pool, 2)[feat::kListZDot], -1.0);
}

TEST(PairFeatures, HandComputedValues) {
  const Vec q = {1.0, 2.0};
  const Doc d = make_doc(3, {2.0, 0.0}, 1, 0.25);
  const std::vector<Vec> pool = {{2.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  const Vec f = pair_features(q, 0, d, pool, 3);
  EXPECT_DOUBLE_EQ(f[feat::kDot], 2.0);
  EXPECT_NEAR(f[feat::kCosine], 2.0 / (std::sqrt(5.0) * 2.0), 1e-15);
  EXPECT_NEAR(f[feat::kNegL2], -std::sqrt(1.0 + 4.0), 1e-15);
  EXPECT_EQ(f[feat::kTopicMatch], 0.0);
  EXPECT_EQ(f[feat::kFreshness], 0.25);
  EXPECT_DOUBLE_EQ(f[feat::kRankPrior], 0.5);
  EXPECT_DOUBLE_EQ(f[feat::kListRankFraction], 1.0);
  // pool dots {2, 2, 3}: mean 7/3, population variance 2/9
  EXPECT_NEAR(f[feat::kListZDot], (2.0 - 7.0 / 3.0) / std::sqrt(2.0 / 9.0), 1e-12);
}

TEST(PairFeatures, DimensionMismatchThrows) {
  const Vec q = {1.0, 0.0};
  const std::vector<Vec> pool = {{1.0, 0.0, 0.0}};
  EXPECT_THROW(pair_features(q, 0, make_doc(1, {1.0, 0.0, 0.0}), pool, 1), Error);
}

TEST(PairFeatures, RankOutsidePoolThrows) {
  const Vec q = {1.0};
  const std::vector<Vec> pool = {{1.0}};
  EXPECT_THROW(pair_features(q, 0, make_doc(1, {1.0}), pool, 2), Error);
}

TEST(PairFeatures, InvariantToPoolOrder) {
  Rng rng = make_rng(17, "pool-order");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec> pool;
    for (int i = 0; i < 9; ++i) pool.push_back(random_unit(rng, 16));
    const Vec q = random_unit(rng, 16);
    const Doc d = make_doc(1, pool[3], 2, 0.3);
    const Vec ref = pair_features(q, 1, d, pool, 4);
    std::shuffle(pool.begin(), pool.end(), rng);
    EXPECT_EQ(pair_features(q, 1, d, pool, 4), ref);
  }
}

Vec members_features(std::span<const Vec> embs, const Vec& q) {
  return pair_features(q, 0, make_doc(1, embs[0]), embs, 1);
}

TEST(ListFeatures, SingletonMeanIsMemberDiversityZero) {
  const Vec q = {1.0, 0.0};
  const std::vector<Vec> embs = {{0.6, 0.8}};
  const std::vector<Vec> rows = {members_features(embs, q)};
  const Vec decay = {1.0};
  const Vec lf = list_features(rows, embs, decay, 4);
  for (std::size_t f = 0; f < kPairFeatureDim; ++f) EXPECT_DOUBLE_EQ(lf[f], rows[0][f]);
  EXPECT_DOUBLE_EQ(lf[kPairFeatureDim], rows[0][feat::kDot]);
  EXPECT_EQ(lf[kPairFeatureDim + 1], 0.0);
  EXPECT_DOUBLE_EQ(lf[kPairFeatureDim + 2], 0.25);
}

TEST(ListFeatures, OrthogonalPairHasDiversityOne) {
  const std::vector<Vec> embs = {{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<Vec> rows(2, Vec(kPairFeatureDim, 0.0));
  const Vec decay = {1.0, 0.5};
  EXPECT_DOUBLE_EQ(list_features(rows, embs, decay, 2)[kPairFeatureDim + 1], 1.0);
}

TEST(ListFeatures, ThreeDocHandComputation) {
  const std::vector<Vec> embs = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  std::vector<Vec> rows(3, Vec(kPairFeatureDim, 0.0));
  rows[0][feat::kDot] = 3.0;
  rows[1][feat::kDot] = 1.0;
  rows[2][feat::kDot] = 2.0;
  rows[0][feat::kFreshness] = 0.2;
  rows[1][feat::kFreshness] = 0.4;
  rows[2][feat::kFreshness] = 0.9;
  const Vec decay = {1.0, 0.5, 0.25};
  const Vec lf = list_features(rows, embs, decay, 6);
  EXPECT_NEAR(lf[feat::kDot], (3.0 + 0.5 + 0.5) / 1.75, 1e-12);
  EXPECT_NEAR(lf[feat::kFreshness], (0.2 + 0.2 + 0.225) / 1.75, 1e-12);
  EXPECT_DOUBLE_EQ(lf[kPairFeatureDim], 3.0);
  // cosines: (a,b)=0, (a,c)=(b,c)=1/sqrt2
  EXPECT_NEAR(lf[kPairFeatureDim + 1], 1.0 - (2.0 / std::sqrt(2.0)) / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(lf[kPairFeatureDim + 2], 0.5);
}

TEST(ListFeatures, EmptyListThrows) {
  const std::vector<Vec> none;
  const Vec decay;
  EXPECT_THROW(list_features(none, none, decay, 3), Error);
}

TEST(ListFeatures, DecayLengthMismatchThrows) {
  const std::vector<Vec> embs = {{1.0}, {1.0}};
  const std::vector<Vec> rows(2, Vec(kPairFeatureDim, 0.0));
  const Vec decay = {1.0};
  EXPECT_THROW(list_features(rows, embs, decay, 2), Error);
}

TEST(Corpus, RoundTripsThroughJsonl) {
  const Corpus c = gen_corpus(40, 3, 5);
  std::stringstream ss;
  c.save_jsonl(ss);
  const Corpus back = Corpus::load_jsonl(ss);
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.docs()[i].id, c.docs()[i].id);
    EXPECT_EQ(back.docs()[i].embedding, c.docs()[i].embedding);
    EXPECT_EQ(back.docs()[i].topic, c.docs()[i].topic);
    EXPECT_EQ(back.docs()[i].freshness, c.docs()[i].freshness);
  }
}

TEST(Corpus, RetrieveIsTopKByDot) {
  const Corpus c = gen_corpus(200, 4, 6);
  Rng rng = make_rng(6, "q");
  const Vec q = random_unit(rng, 16);
  const auto top = c.retrieve(q, 20);
  ASSERT_EQ(top.size(), 20u);
  Vec all;
  for (const auto& d : c.docs()) all.push_back(dot(q, d.embedding));
  std::sort(all.rbegin(), all.rend());
  for (std::size_t i = 0; i < top.size(); ++i) EXPECT_DOUBLE_EQ(dot(q, c.at(top[i]).embedding), all[i]);
  EXPECT_THROW(c.retrieve(q, 201), Error);
}

TEST(Corpus, PoolFeaturesMatchPairFeatures) {
  const Corpus c = gen_corpus(100, 4, 8);
  Rng rng = make_rng(8, "q");
  const Vec q = random_unit(rng, 16);
  const auto pool = c.retrieve(q, 10);
  const auto rows = pool_features(c, q, pool);
  std::vector<Vec> embs;
  for (DocId id : pool) embs.push_back(c.at(id).embedding);
  for (std::size_t i = 0; i < pool.size(); ++i)
    EXPECT_EQ(rows[i], pair_features(q, c.nearest_topic(q), c.at(pool[i]), embs, i + 1));
}

}  // namespace
}  // namespace dma
