#include <gtest/gtest.h>

#include "ecgx/gradcheck.hpp"
#include "ecgx/ops.hpp"
#include "support/grad_cases.hpp"

using namespace ecgx;

TEST(GradCheck, LinearFunctionIsExact) {
  Tensor x(Shape{1, 1, 3}, std::vector<double>{1, 2, 3});
  std::vector<Tensor> in{x};
  auto r = grad_check([&] { return sum(scale(x, 2.5)); }, in);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coords_checked, 3u);
}

TEST(GradCheck, SubsetSamplingChecksRequestedCount) {
  Tensor x(Shape{1, 10, 1}, 1.0);
  std::vector<Tensor> in{x};
  GradCheckOptions o;
  o.max_coords_per_input = 4;
  EXPECT_EQ(grad_check([&] { return sum(mul(x, x)); }, in, o).coords_checked, 4u);
}

// Every primitive over 50 seeds.
TEST(GradCheck, EveryPrimitiveOverFiftySeeds) {
  for (const auto& c : gradcases::primitive_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) worst = std::max(worst, c.run(seed).max_rel_error);
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(GradCheck, ActivationsAreTight) {
  auto cases = gradcases::primitive_cases();
  for (const auto& c : cases) {
    if (c.name != "relu" && c.name != "sigmoid" && c.name != "tanh" && c.name != "cross_entropy") continue;
    for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_LT(c.run(seed).max_rel_error, 1e-6) << c.name;
  }
}

TEST(GradCheck, CellsAttentionAndWarp) {
  for (const auto& c : gradcases::equation_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) worst = std::max(worst, c.run(seed).max_rel_error);
    const bool cell = c.name.find("step") != std::string::npos;
    EXPECT_LT(worst, cell ? 1e-5 : 1e-4) << c.name;
  }
}

TEST(GradCheck, TinyComposites) {
  EXPECT_LT(gradcases::tiny_convlstm_check(1).max_rel_error, 1e-4);
  EXPECT_LT(gradcases::tiny_gated_check(2, Fusion::concat).max_rel_error, 1e-4);
  EXPECT_LT(gradcases::tiny_gated_check(3, Fusion::mean_vote).max_rel_error, 1e-4);
  EXPECT_LT(gradcases::tiny_residual_check(4).max_rel_error, 1e-4);
}
