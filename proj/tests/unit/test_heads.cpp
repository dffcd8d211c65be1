#include <gtest/gtest.h>

#include <random>

#include "ecgx/errors.hpp"
#include "ecgx/heads.hpp"
#include "ecgx/model.hpp"
#include "support/invariant_suite.hpp"
#include "support/oracles.hpp"

using namespace ecgx;

TEST(Heads, PoolingExamples) {
  Tensor constant(Shape{1, 6, 3}, 3.0);
  for (double v : oracle::values(pool_features(constant, {}, PoolKind::average))) EXPECT_DOUBLE_EQ(v, 3.0);
  Tensor seq(Shape{1, 3, 1}, std::vector<double>{1, 5, 2});
  EXPECT_EQ(pool_features(seq, {}, PoolKind::max).item(), 5.0);
  Tensor padded(Shape{1, 3, 1}, std::vector<double>{1, 3, 100});
  const std::size_t valid[] = {2};
  EXPECT_DOUBLE_EQ(pool_features(padded, valid, PoolKind::average).item(), 2.0);
}

TEST(Heads, ZeroValidLengthIsAnError) {
  Tensor x(Shape{1, 3, 1}, 1.0);
  const std::size_t valid[] = {0};
  EXPECT_THROW(pool_features(x, valid, PoolKind::max), ShapeError);
}

TEST(Heads, PermutationInvarianceOverFiftySeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_LT(invariants::pooling_permutation(seed), 1e-12);
}

TEST(Heads, FullValidEqualsUnmasked) {
  std::mt19937_64 rng(3);
  Tensor x(Shape{2, 7, 3}, oracle::randn(42, rng));
  const std::size_t valid[] = {7, 7};
  for (PoolKind k : {PoolKind::average, PoolKind::max, PoolKind::sum})
    EXPECT_EQ(oracle::values(pool_features(x, valid, k)), oracle::values(pool_features(x, {}, k)));
}

TEST(Heads, MaxIsMonotoneAndAverageIsLinear) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = oracle::randn(12, rng);
    const double base = pool_features(Tensor(Shape{1, 12, 1}, v), {}, PoolKind::max).item();
    v[trial % 12] += std::abs(oracle::randn(1, rng)[0]);
    EXPECT_GE(pool_features(Tensor(Shape{1, 12, 1}, v), {}, PoolKind::max).item(), base);
  }
  oracle::Vec a = oracle::randn(10, rng), b = oracle::randn(10, rng), c(10);
  for (int i = 0; i < 10; ++i) c[i] = 2.0 * a[i] - 0.5 * b[i];
  auto gap = [](const oracle::Vec& v) { return pool_features(Tensor(Shape{1, 5, 2}, v), {}, PoolKind::average); };
  auto ga = oracle::values(gap(a)), gb = oracle::values(gap(b)), gc = oracle::values(gap(c));
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(gc[k], 2.0 * ga[k] - 0.5 * gb[k], 1e-12);
}

TEST(Heads, ClassifierMatchesLinearOracle) {
  std::mt19937_64 rng(5);
  auto head = Classifier::make(6, 4, rng);
  EXPECT_EQ(head.features(), 6u);
  EXPECT_EQ(head.classes(), 4u);
  for (double w : oracle::values(head.weight)) EXPECT_LE(std::abs(w), 1.0 / std::sqrt(6.0));
  for (auto& v : head.bias.mutable_values()) v = oracle::randn(1, rng)[0];
  auto x = oracle::randn(12, rng);
  auto got = oracle::values(classify(Tensor(Shape{2, 1, 6}, x), head));
  auto want = oracle::linear(x, 2, 6, oracle::values(head.weight), 4, oracle::values(head.bias));
  EXPECT_LT(oracle::max_abs_diff(got, want), 1e-12);
  EXPECT_THROW(classify(Tensor(Shape{1, 1, 5}), head), ShapeError);
}

TEST(Heads, MeanVote) {
  std::mt19937_64 rng(6);
  // identical heads keep the single-head argmax
  Tensor l(Shape{1, 1, 4}, oracle::randn(4, rng));
  const Tensor same[] = {l, l};
  EXPECT_LT(oracle::max_abs_diff(oracle::values(fuse_mean_vote(same)), oracle::values(softmax(l))), 1e-15);
  // opposite near one-hot heads give one half each
  const Tensor opposite[] = {Tensor(Shape{1, 1, 4}, std::vector<double>{800, 0, 0, 0}),
                             Tensor(Shape{1, 1, 4}, std::vector<double>{0, 800, 0, 0})};
  auto p = oracle::values(fuse_mean_vote(opposite));
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
  // three random heads vs the hand-computed mean
  std::vector<oracle::Vec> raw;
  std::vector<Tensor> heads;
  for (int h = 0; h < 3; ++h) {
    raw.push_back(oracle::randn(4, rng));
    heads.emplace_back(Shape{1, 1, 4}, raw.back());
  }
  auto got = oracle::values(fuse_mean_vote(heads));
  for (int c = 0; c < 4; ++c) {
    double m = 0.0;
    for (const auto& r : raw) m += oracle::softmax(r)[c] / 3.0;
    EXPECT_NEAR(got[c], m, 1e-12);
  }
  const Tensor mismatched[] = {Tensor(Shape{1, 1, 4}), Tensor(Shape{1, 1, 3})};
  EXPECT_THROW(fuse_mean_vote(mismatched), ShapeError);
}

TEST(Heads, SpecValidationAndNames) {
  HeadSpec h;
  EXPECT_NO_THROW(validate(h));
  h.taps = {3};
  EXPECT_THROW(validate(h), ConfigError);
  h.fusion = Fusion::concat;
  EXPECT_NO_THROW(validate(h));
  h.taps.clear();
  h.fusion = Fusion::mean_vote;
  EXPECT_THROW(validate(h), ConfigError);
  EXPECT_EQ(parse_pool_kind("gap"), PoolKind::average);
  EXPECT_EQ(parse_pool_kind("gmp"), PoolKind::max);
  EXPECT_THROW(parse_pool_kind("lse"), ConfigError);
  EXPECT_EQ(parse_fusion(fusion_name(Fusion::mean_vote)), Fusion::mean_vote);
}

TEST(Heads, MeanVoteModelBuildsOneClassifierPerPath) {
  ModelSpec s;
  s.backbone = backbone_preset("desk7");
  s.input_length = kDeskLength;
  s.head.taps = {5};
  s.head.fusion = Fusion::mean_vote;
  Model m(s, 1);
  ASSERT_EQ(m.classifiers().size(), 2u);
  EXPECT_EQ(m.classifiers()[0].features() + m.classifiers()[1].features(), 64u + 32u);
  s.head.fusion = Fusion::concat;
  Model c(s, 1);
  ASSERT_EQ(c.classifiers().size(), 1u);
  EXPECT_EQ(c.classifiers()[0].features(), 96u);
  EXPECT_EQ(c.parameter_count(), count_model_parameters(s));
}
