#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"
#include "ecgx/tensor.hpp"
#include "support/oracles.hpp"

using namespace ecgx;
using oracle::Vec;

TEST(Tensor, ShapeAndValues) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.values().size(), 24u);
  EXPECT_DOUBLE_EQ(t.at(1, 2, 3), 1.5);
  EXPECT_THROW(Tensor(Shape{1, 2, 2}, Vec{1, 2, 3}), ShapeError);
}

TEST(Tensor, BackwardAccumulatesIntoLeaves) {
  Tensor a(Shape{1, 1, 2}, Vec{1.0, 2.0});
  a.set_requires_grad(true);
  Tensor y = sum(mul(a, a));
  y.backward();
  ASSERT_TRUE(a.has_grad());
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 4.0);
  sum(a).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  a.zero_grad();
  EXPECT_DOUBLE_EQ(a.grad()[1], 0.0);
}

TEST(Tensor, SharedSubgraphGetsBothContributions) {
  Tensor x(Shape{1, 1, 1}, Vec{3.0});
  x.set_requires_grad(true);
  Tensor s = scale(x, 2.0);
  Tensor y = add(mul(s, s), s);  // 4x^2 + 2x
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0 * 3.0 + 2.0);
}

TEST(Tensor, NoGradGuardBuildsNoGraph) {
  Tensor x(Shape{1, 1, 1}, Vec{1.0});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    Tensor y = scale(x, 3.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Tensor, BackwardWrtLeavesOtherLeavesAlone) {
  Tensor a(Shape{1, 1, 1}, Vec{2.0});
  Tensor b(Shape{1, 1, 1}, Vec{5.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor y = mul(a, b);
  const Tensor wrt[] = {a};
  backward_wrt(y, wrt);
  EXPECT_DOUBLE_EQ(a.grad()[0], 5.0);
  EXPECT_FALSE(b.has_grad() && b.grad()[0] != 0.0);
}

TEST(Tensor, NonFiniteResultIsReported) {
  Tensor x(Shape{1, 1, 1}, Vec{1e308});
  EXPECT_THROW(scale(x, 10.0), NumericalError);
}

TEST(Tensor, DetachCutsTheGraph) {
  Tensor x(Shape{1, 1, 1}, Vec{1.0});
  x.set_requires_grad(true);
  Tensor d = scale(x, 2.0).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_DOUBLE_EQ(d.item(), 2.0);
}

// ---- conv1d / linear ------------------------------------------------------------

TEST(Conv1d, AllOnes) {
  Tensor x(Shape{1, 5, 1}, 1.0);
  Tensor w(Shape{3, 1, 1}, 1.0);
  Tensor y = conv1d(x, w, Tensor(Shape{1, 1, 1}, 0.0));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 1}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Conv1d, PaperLengthWithKernel21) {
  Tensor x(Shape{1, 18300, 1}, 0.5);
  Tensor w(Shape{21, 1, 1}, 0.1);
  EXPECT_EQ(conv1d(x, w, Tensor()).time(), 18280u);
}

TEST(Conv1d, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t B = 1 + seed % 2, L = 7, Cin = 2, K = 3, Cout = 2;
    Vec x = oracle::randn(B * L * Cin, rng), w = oracle::randn(K * Cin * Cout, rng), b = oracle::randn(Cout, rng);
    Tensor y = conv1d(Tensor(Shape{B, L, Cin}, x), Tensor(Shape{K, Cin, Cout}, w), Tensor(Shape{1, 1, Cout}, b));
    EXPECT_LE(oracle::max_abs_diff(oracle::values(y), oracle::conv1d(x, B, L, Cin, w, K, Cout, b)), 1e-12);
  }
}

TEST(Conv1d, TooShortNamesTheLayer) {
  Tensor x(Shape{1, 4, 1}, 1.0);
  Tensor w(Shape{5, 1, 1}, 1.0);
  try {
    conv1d(x, w, Tensor(), "conv3");
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv3"), std::string::npos);
  }
}

TEST(Linear, IdentityAndZeroWeights) {
  Vec x{1, -2, 3};
  Vec eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor y = linear(Tensor(Shape{1, 1, 3}, x), Tensor(Shape{1, 3, 3}, eye), Tensor(Shape{1, 1, 3}, 0.0));
  EXPECT_EQ(oracle::values(y), x);
  Tensor z = linear(Tensor(Shape{1, 1, 3}, x), Tensor(Shape{1, 3, 2}, 0.0), Tensor(Shape{1, 1, 2}, Vec{4, 5}));
  EXPECT_EQ(oracle::values(z), (Vec{4, 5}));
}

TEST(Linear, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const std::size_t B = 2, T = 3, F = 4, C = 3;
    Vec x = oracle::randn(B * T * F, rng), w = oracle::randn(F * C, rng), b = oracle::randn(C, rng);
    Tensor y = linear(Tensor(Shape{B, T, F}, x), Tensor(Shape{1, F, C}, w), Tensor(Shape{1, 1, C}, b));
    EXPECT_LE(oracle::max_abs_diff(oracle::values(y), oracle::linear(x, B * T, F, w, C, b)), 1e-12);
  }
  EXPECT_THROW(linear(Tensor(Shape{1, 1, 3}), Tensor(Shape{1, 4, 2}), Tensor()), ShapeError);
}

// ---- elementwise ------------------------------------------------------------------

TEST(Elementwise, ReluSigmoidTanh) {
  Tensor x(Shape{1, 3, 1}, Vec{-1, 0, 2});
  EXPECT_EQ(oracle::values(relu(x)), (Vec{0, 0, 2}));
  EXPECT_DOUBLE_EQ(sigmoid(Tensor(Shape{}, 0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(tanh_act(Tensor(Shape{}, 0.0)).item(), 0.0);
  EXPECT_NEAR(sigmoid(Tensor(Shape{}, -800.0)).item(), 0.0, 1e-300);
}

TEST(Elementwise, PowAbsRejectsSmallExponent) { EXPECT_THROW(pow_abs(Tensor(Shape{}, 1.0), 0.5), ConfigError); }

// ---- pooling ------------------------------------------------------------------------

TEST(AvgPool, WindowMeansAndTrailingDrop) {
  EXPECT_EQ(oracle::values(avg_pool1d(Tensor(Shape{1, 4, 1}, Vec{1, 2, 3, 4}))), (Vec{1.5, 3.5}));
  EXPECT_EQ(oracle::values(avg_pool1d(Tensor(Shape{1, 5, 1}, Vec{1, 2, 3, 4, 5}))), (Vec{1.5, 3.5}));
  EXPECT_EQ(avg_pool1d(Tensor(Shape{1, 1103, 1})).time(), 551u);
  EXPECT_THROW(avg_pool1d(Tensor(Shape{1, 1, 1})), ShapeError);
}

// ---- batch norm ---------------------------------------------------------------------

TEST(BatchNorm, TrainModeStandardises) {
  std::mt19937_64 rng(3);
  const std::size_t B = 4, T = 50, C = 3;
  Tensor x(Shape{B, T, C}, oracle::randn(B * T * C, rng, 3.0));
  for (auto& v : x.mutable_values()) v += 2.0;
  BatchNormStats st(C);
  Tensor y = batch_norm1d(x, Tensor(Shape{1, 1, C}, 1.0), Tensor(Shape{1, 1, C}, 0.0), st, Mode::train);
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < B * T; ++i) m += y.values()[i * C + c];
    m /= B * T;
    for (std::size_t i = 0; i < B * T; ++i) v += std::pow(y.values()[i * C + c] - m, 2);
    v /= B * T;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-4);
    EXPECT_NE(st.running_mean[c], 0.0);
  }
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  std::mt19937_64 rng(4);
  Tensor x(Shape{2, 5, 2}, oracle::randn(20, rng));
  BatchNormStats st(2);
  Tensor y = batch_norm1d(x, Tensor(Shape{1, 1, 2}, 1.0), Tensor(Shape{1, 1, 2}, 0.0), st, Mode::eval, 0.1, 0.0);
  EXPECT_LE(oracle::max_abs_diff(oracle::values(y), oracle::values(x)), 1e-15);
}

// ---- dropout ------------------------------------------------------------------------

TEST(Dropout, IdentityCases) {
  std::mt19937_64 rng(1);
  Tensor x(Shape{1, 10, 1}, 2.0);
  EXPECT_EQ(oracle::values(dropout(x, 0.0, Mode::train, rng)), oracle::values(x));
  EXPECT_EQ(oracle::values(dropout(x, 0.7, Mode::eval, rng)), oracle::values(x));
  EXPECT_THROW(dropout(x, 1.0, Mode::train, rng), ConfigError);
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  std::mt19937_64 rng(2);
  Tensor x(Shape{1, 1000000, 1}, 1.0);
  Tensor y = dropout(x, 0.5, Mode::train, rng);
  const double m = std::accumulate(y.values().begin(), y.values().end(), 0.0) / 1e6;
  EXPECT_NEAR(m, 1.0, 0.01);
}

// ---- softmax / CE ---------------------------------------------------------------------

TEST(Softmax, UniformShiftInvariantStable) {
  Tensor p = softmax(Tensor(Shape{1, 1, 4}, 0.0));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  Tensor big = softmax(Tensor(Shape{1, 1, 2}, Vec{1000, 0}));
  EXPECT_DOUBLE_EQ(big.values()[0], 1.0);
  EXPECT_DOUBLE_EQ(big.values()[1], 0.0);
}

TEST(Softmax, NormalisedAndShiftInvariantOverSeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    Vec s = oracle::randn(12, rng, 5.0);
    Vec shifted = s;
    for (auto& v : shifted) v += 17.25;
    Tensor a = softmax(Tensor(Shape{3, 1, 4}, s));
    Tensor b = softmax(Tensor(Shape{3, 1, 4}, shifted));
    for (std::size_t r = 0; r < 3; ++r) {
      double z = 0;
      for (std::size_t c = 0; c < 4; ++c) z += a.values()[r * 4 + c];
      EXPECT_NEAR(z, 1.0, 1e-12);
    }
    EXPECT_LE(oracle::max_abs_diff(oracle::values(a), oracle::values(b)), 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const int t[] = {2};
  EXPECT_NEAR(cross_entropy(Tensor(Shape{1, 1, 4}, 0.0), t).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(Tensor(Shape{1, 1, 4}, Vec{0, 0, 60, 0}), t).item(), 0.0, 1e-12);
  const int bad[] = {4};
  EXPECT_THROW(cross_entropy(Tensor(Shape{1, 1, 4}, 0.0), bad), std::out_of_range);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHotOverBatch) {
  std::mt19937_64 rng(8);
  Vec s = oracle::randn(8, rng);
  Tensor logits(Shape{2, 1, 4}, s);
  logits.set_requires_grad(true);
  const int t[] = {1, 3};
  cross_entropy(logits, t).backward();
  for (std::size_t r = 0; r < 2; ++r) {
    Vec p = oracle::softmax(Vec(s.begin() + r * 4, s.begin() + r * 4 + 4));
    for (std::size_t c = 0; c < 4; ++c) {
      const double want = (p[c] - (static_cast<int>(c) == t[r] ? 1.0 : 0.0)) / 2.0;
      EXPECT_NEAR(logits.grad()[r * 4 + c], want, 1e-14);
    }
  }
}

// ---- routing ----------------------------------------------------------------------------

TEST(Routing, ConcatSliceCropPad) {
  Tensor a(Shape{1, 2, 1}, Vec{1, 2});
  Tensor b(Shape{1, 2, 2}, Vec{3, 4, 5, 6});
  const Tensor parts[] = {a, b};
  Tensor c = concat_channels(parts);
  EXPECT_EQ(oracle::values(c), (Vec{1, 3, 4, 2, 5, 6}));
  EXPECT_EQ(oracle::values(slice_channels(c, 1, 2)), (Vec{3, 4, 5, 6}));
  Tensor t(Shape{1, 5, 1}, Vec{0, 1, 2, 3, 4});
  EXPECT_EQ(oracle::values(crop_time_center(t, 3)), (Vec{1, 2, 3}));
  EXPECT_EQ(oracle::values(crop_time_center(t, 4)), (Vec{0, 1, 2, 3}));
  EXPECT_EQ(oracle::values(pad_time(a, 4)), (Vec{1, 2, 0, 0}));
  EXPECT_THROW(pad_time(t, 3), ShapeError);
  EXPECT_EQ(oracle::values(slice_time(t, 1, 2)), (Vec{1, 2}));
}

TEST(Routing, SelectAndGather) {
  Tensor a(Shape{2, 1, 1}, Vec{1, 2});
  Tensor b(Shape{2, 1, 1}, Vec{10, 20});
  const char keep[] = {1, 0};
  EXPECT_EQ(oracle::values(select_batch(keep, a, b)), (Vec{1, 20}));
  const Tensor steps[] = {a, b};
  const std::size_t idx[] = {1, 0};
  EXPECT_EQ(oracle::values(gather_steps(steps, idx)), (Vec{10, 2}));
}

// ---- global pooling -----------------------------------------------------------------------

TEST(GlobalPool, Basics) {
  Tensor k(Shape{1, 4, 2}, 3.0);
  Tensor g = global_pool(k, {}, PoolKind::average);
  for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 3.0);
  EXPECT_DOUBLE_EQ(global_pool(Tensor(Shape{1, 3, 1}, Vec{1, 5, 2}), {}, PoolKind::max).item(), 5.0);
  const std::size_t two[] = {2};
  EXPECT_DOUBLE_EQ(global_pool(Tensor(Shape{1, 3, 1}, Vec{1, 3, 100}), two, PoolKind::average).item(), 2.0);
  const std::size_t zero[] = {0};
  EXPECT_THROW(global_pool(Tensor(Shape{1, 3, 1}), zero, PoolKind::max), ShapeError);
}

// ---- resampling / shifting --------------------------------------------------------------

TEST(Resample, AlignedEndpoints) {
  Tensor x(Shape{1, 3, 1}, Vec{0, 2, 4});
  EXPECT_EQ(oracle::values(resample_time(x, 5)), (Vec{0, 1, 2, 3, 4}));
  EXPECT_EQ(oracle::values(resample_time(x, 3)), (Vec{0, 2, 4}));
}

TEST(ShiftSample, ZeroShiftIsIdentityAndEdgesClamp) {
  std::mt19937_64 rng(1);
  Vec s = oracle::randn(9, rng);
  Tensor sig(Shape{1, 9, 1}, s);
  EXPECT_EQ(oracle::values(shift_sample(sig, Tensor(Shape{1, 9, 1}, 0.0))), s);
  // A shift of 2 moves every position at least L-1 samples to the right.
  Tensor far = shift_sample(sig, Tensor(Shape{1, 9, 1}, 2.0));
  for (double v : far.values()) EXPECT_DOUBLE_EQ(v, s.back());
}

TEST(Reductions, SumMeanDiff) {
  Tensor x(Shape{1, 4, 1}, Vec{1, 2, 4, 8});
  EXPECT_DOUBLE_EQ(sum(x).item(), 15.0);
  EXPECT_DOUBLE_EQ(mean(x).item(), 3.75);
  EXPECT_EQ(oracle::values(diff_time(x)), (Vec{1, 2, 4}));
}

TEST(Determinism, SameSeedSameTrainForward) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x(Shape{2, 20, 3}, oracle::randn(120, rng));
    Tensor w(Shape{3, 3, 4}, oracle::randn(36, rng));
    w.set_requires_grad(true);
    std::mt19937_64 drop(9);
    Tensor y = sum(dropout(relu(conv1d(x, w, Tensor())), 0.3, Mode::train, drop));
    y.backward();
    Vec out = oracle::values(y);
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
