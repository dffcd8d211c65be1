#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ecgx/checkpoint.hpp"
#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"
#include "ecgx/optim.hpp"

using namespace ecgx;

namespace {

Parameter scalar_param(const std::string& name, double v, const std::string& group = "default") {
  Tensor t(Shape{1, 1, 1}, v);
  t.set_requires_grad(true);
  return {name, t, group};
}

void set_grad(Parameter& p, double g) {
  p.tensor.zero_grad();
  Tensor y = scale(p.tensor, g);
  y.backward();
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02, 1e-3, 250.0}) {
    ParameterList ps{scalar_param("w", 1.0)};
    set_grad(ps[0], g);
    Adam adam;
    adam.step(ps);
    const double delta = ps[0].tensor.item() - 1.0;
    EXPECT_LT(delta * g, 0.0);
    EXPECT_GE(std::abs(delta), 0.99 * 1e-3);
    EXPECT_LE(std::abs(delta), 1e-3);
  }
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParameterList ps{scalar_param("w", 0.7)};
  set_grad(ps[0], 0.0);
  Adam adam;
  for (int i = 0; i < 5; ++i) adam.step(ps);
  EXPECT_EQ(ps[0].tensor.item(), 0.7);
}

TEST(Adam, TenStepsOnSquareMatchScalarOracle) {
  ParameterList ps{scalar_param("w", 1.5)};
  Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  double w = 1.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    ps[0].tensor.zero_grad();
    sum(mul(ps[0].tensor, ps[0].tensor)).backward();
    adam.step(ps);
    const double g = 2.0 * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(ps[0].tensor.item(), w, 1e-10) << "step " << t;
  }
  EXPECT_EQ(adam.steps(), 10u);
}

TEST(Adam, GroupsUseTheirOwnRateAndDecayTogether) {
  ParameterList ps{scalar_param("a", 0.0, "backbone"), scalar_param("b", 0.0, "head")};
  Adam adam;
  adam.set_group_lr("backbone", 1e-4);
  adam.set_group_lr("head", 1e-3);
  set_grad(ps[0], 1.0);
  set_grad(ps[1], 1.0);
  adam.step(ps);
  EXPECT_NEAR(std::abs(ps[0].tensor.item()) * 10.0, std::abs(ps[1].tensor.item()), 1e-12);
  adam.decay(0.95);
  EXPECT_DOUBLE_EQ(adam.group_lr("backbone"), 0.95e-4);
  EXPECT_DOUBLE_EQ(adam.group_lr("head"), 0.95e-3);
  EXPECT_DOUBLE_EQ(adam.group_lr("default"), 0.95e-3);
}

TEST(Adam, UnknownGroupIsAConfigError) {
  ParameterList ps{scalar_param("a", 0.0, "nowhere")};
  set_grad(ps[0], 1.0);
  Adam adam;
  EXPECT_THROW(adam.step(ps), ConfigError);
}

TEST(Parameters, DuplicateNamesRejected) {
  ParameterList ps{scalar_param("a", 0.0), scalar_param("a", 1.0)};
  EXPECT_THROW(require_unique_names(ps), ConfigError);
  ps[1].name = "b";
  EXPECT_NO_THROW(require_unique_names(ps));
  EXPECT_EQ(count_parameters(ps), 2u);
}

TEST(Checkpoint, RoundTripThroughStream) {
  std::vector<CheckpointEntry> entries;
  const std::vector<double> a{1.5, -2.25, 3.0, 0.125, 8.0, -1.0};
  entries.push_back(make_entry("conv1.weight", a, Shape{3, 1, 2}));
  entries.push_back(make_entry("classifier.bias", std::vector<double>{0.5, 0.25}, Shape{1, 1, 2}));
  std::stringstream buf;
  write_checkpoint(buf, entries);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "RNN1");
  auto back = read_checkpoint(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "conv1.weight");
  EXPECT_EQ(back[0].dims, (std::vector<std::uint32_t>{3, 1, 2}));
  EXPECT_EQ(back[1].dims, (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(back[0].values, entries[0].values);
  EXPECT_EQ(back[1].values, entries[1].values);
}

TEST(Checkpoint, HeaderLayoutIsLittleEndian) {
  std::vector<CheckpointEntry> entries{make_entry("x", std::vector<double>{1.0}, Shape{1, 1, 1})};
  std::stringstream buf;
  write_checkpoint(buf, entries);
  const std::string b = buf.str();
  // magic | version | count | name_len | name | rank | dim | f32
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 2 + 1 + 1 + 4 + 4);
  EXPECT_EQ(static_cast<unsigned char>(b[4]), kCheckpointVersion);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 1u);
  EXPECT_EQ(b[14], 'x');
}

TEST(Checkpoint, CorruptInputsAreFormatErrors) {
  std::vector<CheckpointEntry> entries{make_entry("w", std::vector<double>{1, 2, 3}, Shape{1, 3, 1})};
  std::stringstream buf;
  write_checkpoint(buf, entries);
  const std::string good = buf.str();

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_checkpoint(s1), FormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  std::stringstream s2(bad_version);
  EXPECT_THROW(read_checkpoint(s2), FormatError);

  std::stringstream s3(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_checkpoint(s3), FormatError);

  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ecgx_ckpt_roundtrip.bin";
  std::vector<CheckpointEntry> entries{make_entry("w", std::vector<double>{4, 5}, Shape{1, 2, 1})};
  save_checkpoint(path, entries);
  auto back = load_checkpoint(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].values, (std::vector<float>{4.0f, 5.0f}));
  std::filesystem::remove(path);
}
