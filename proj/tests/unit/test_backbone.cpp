#include <gtest/gtest.h>

#include <random>

#include "ecgx/backbone.hpp"
#include "ecgx/errors.hpp"
#include "ecgx/model.hpp"
#include "support/oracles.hpp"

using namespace ecgx;

namespace {

// Closed form for a plain stack: every conv has bias and BN, classifier on the last channels.
std::size_t plain_count(const std::vector<std::size_t>& channels, std::size_t k, std::size_t classes) {
  std::size_t n = 0, in = 1;
  for (auto c : channels) {
    n += k * in * c + c + 2 * c;
    in = c;
  }
  return n + in * classes + classes;
}

}  // namespace

TEST(Backbone, PaperOutputLengths) {
  EXPECT_EQ(output_length(backbone_preset("cnn4"), kPaddedLength), 4535u);
  EXPECT_EQ(output_length(backbone_preset("cnn7"), kPaddedLength), 531u);
  EXPECT_EQ(output_length(backbone_preset("cnn15"), kPaddedLength), 206u);
  EXPECT_EQ(output_length(backbone_preset("cnn15res"), kPaddedLength), 206u);
  EXPECT_EQ(output_length(backbone_preset("cnn17"), kPaddedLength), 63u);
  EXPECT_EQ(conv_output_length(backbone_preset("cnn17"), kPaddedLength, 13), 492u);
  EXPECT_EQ(conv_output_length(backbone_preset("cnn7"), kPaddedLength, 1), 18280u);
}

TEST(Backbone, PaperChannelSeries) {
  auto channels = [](const char* name) {
    std::vector<std::size_t> v;
    auto s = backbone_preset(name);
    for (std::size_t i = 1; i <= s.conv_count(); ++i) v.push_back(s.channels_at(i));
    return v;
  };
  EXPECT_EQ(channels("cnn4"), (std::vector<std::size_t>{16, 32, 64, 128}));
  EXPECT_EQ(channels("cnn7"), (std::vector<std::size_t>{16, 32, 32, 64, 64, 128, 128}));
  EXPECT_EQ(channels("cnn15"),
            (std::vector<std::size_t>{16, 32, 32, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256}));
  EXPECT_EQ(channels("cnn17"),
            (std::vector<std::size_t>{16, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256, 256, 256, 512, 512}));
}

TEST(Backbone, Cnn7DropoutSeriesAndKernel) {
  auto s = backbone_preset("cnn7");
  std::vector<double> drop;
  for (const auto& l : s.layers)
    if (l.kind == LayerKind::conv) {
      drop.push_back(l.dropout);
      EXPECT_EQ(l.kernel, 21u);
    }
  EXPECT_EQ(drop, (std::vector<double>{0, 0.2, 0.3, 0.4, 0.5, 0.5, 0}));
  auto ramp = ramp_dropout(15);
  EXPECT_EQ(ramp.front(), 0.0);
  EXPECT_EQ(ramp.back(), 0.0);
  EXPECT_DOUBLE_EQ(*std::max_element(ramp.begin(), ramp.end()), 0.5);
  for (std::size_t i = 1; i + 1 < ramp.size(); ++i) EXPECT_GE(ramp[i], ramp[i - 1] - 1e-12);
}

TEST(Backbone, EveryPoolFollowsFloorArithmetic) {
  for (const auto& name : backbone_preset_names()) {
    auto spec = backbone_preset(name);
    const std::size_t input = name == "desk7" ? kDeskLength : kPaddedLength;
    auto rows = layer_table(spec, input);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].label == "pool") {
        EXPECT_EQ(rows[i].length, (rows[i - 1].length - 2) / 2 + 1) << name;
      }
      if (rows[i].conv_index) {
        EXPECT_LE(rows[i].length, rows[i - 1].length) << name;
      }
    }
    EXPECT_EQ(rows.back().length, output_length(spec, input)) << name;
  }
}

TEST(Backbone, ClosedFormCountsMatchLoopSum) {
  EXPECT_EQ(count_model_parameters(ModelSpec{}), plain_count({16, 32, 32, 64, 64, 128, 128}, 21, 4));
  EXPECT_EQ(plain_count({16, 32, 32, 64, 64, 128, 128}, 21, 4), 679620u);
  EXPECT_EQ(plain_count({16, 32, 64, 128}, 21, 4), 227364u);
  std::size_t table = 0;
  for (const auto& r : layer_table(backbone_preset("cnn15"), kPaddedLength)) table += r.params;
  EXPECT_EQ(table, count_backbone_parameters(backbone_preset("cnn15")));
}

TEST(Backbone, InstantiatedParametersMatchClosedForm) {
  for (const char* name : {"cnn4", "desk7", "cnn15res"}) {
    auto spec = backbone_preset(name);
    Backbone b(spec, 3);
    EXPECT_EQ(count_parameters(b.parameters()), count_backbone_parameters(spec)) << name;
  }
}

TEST(Backbone, LayoutTextRoundTrip) {
  for (const auto& name : backbone_preset_names()) {
    auto spec = backbone_preset(name);
    EXPECT_EQ(parse_layers(format_layers(spec)), spec.layers) << name;
  }
  auto layers = parse_layers("conv:8:5:0.1, pool, res{, conv:8:5, conv:8:5, }res");
  ASSERT_EQ(layers.size(), 6u);
  EXPECT_EQ(layers[0].channels_out, 8u);
  EXPECT_EQ(layers[0].kernel, 5u);
  EXPECT_DOUBLE_EQ(layers[0].dropout, 0.1);
  EXPECT_EQ(layers[1].kind, LayerKind::avgpool);
  EXPECT_EQ(layers[2].kind, LayerKind::residual_begin);
  EXPECT_THROW(parse_layers("conv:x"), ConfigError);
  EXPECT_THROW(parse_layers("dense:4"), ConfigError);
  EXPECT_THROW(parse_layers("conv:4:21:1.5"), ConfigError);
}

TEST(Backbone, InvalidLayoutsAreRejected) {
  EXPECT_THROW(backbone_preset("cnn99"), ConfigError);
  BackboneSpec s;
  s.name = "bad";
  s.layers = {LayerSpec::pool(), LayerSpec::conv(4)};
  EXPECT_THROW(validate(s), ConfigError);
  s.layers = {LayerSpec::conv(4), LayerSpec::residual_begin(), LayerSpec::conv(4)};
  EXPECT_THROW(validate(s), ConfigError);
  s.layers = {LayerSpec::conv(4, 21, 1.0)};
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(Backbone, TooShortInputNamesTheLayer) {
  try {
    layer_table(backbone_preset("cnn7"), 100);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos);
  }
}

TEST(Backbone, PaperNameWithWrongLayoutFailsConstruction) {
  auto s = backbone_preset("cnn7");
  s.layers.erase(s.layers.begin() + 2);  // drop the first pool
  try {
    Backbone b(s, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("531"), std::string::npos);
  }
}

TEST(Backbone, ValidLengthPropagation) {
  EXPECT_EQ(propagate_valid(2700, kPaddedLength, 63), 9u);
  EXPECT_EQ(propagate_valid(kPaddedLength, kPaddedLength, 531), 531u);
  EXPECT_EQ(propagate_valid(9150, kPaddedLength, 531), 266u);
  EXPECT_EQ(propagate_valid(1, kPaddedLength, 63), 1u);
}

TEST(Backbone, ForwardShapeAndValid) {
  auto spec = backbone_preset("desk7");
  Backbone b(spec, 1);
  Tensor x(Shape{2, kDeskLength, 1}, 0.1);
  std::mt19937_64 rng(0);
  const std::size_t lengths[] = {kDeskLength, 500};
  const std::size_t taps[] = {3};
  auto out = b.forward(x, lengths, Mode::eval, rng, taps);
  EXPECT_EQ(out.features.shape(), (Shape{2, output_length(spec, kDeskLength), 64}));
  EXPECT_EQ(out.valid[0], out.features.time());
  EXPECT_EQ(out.valid[1], propagate_valid(500, kDeskLength, out.features.time()));
  EXPECT_EQ(out.taps.at(3).time(), conv_output_length(spec, kDeskLength, 3));
}

TEST(Backbone, ForwardIsDeterministic) {
  auto spec = backbone_preset("desk7");
  Backbone a(spec, 5), b(spec, 5);
  std::mt19937_64 data(1);
  Tensor x(Shape{2, kDeskLength, 1}, oracle::randn(2 * kDeskLength, data));
  std::mt19937_64 r1(9), r2(9), r3(0), r4(1);
  EXPECT_EQ(oracle::values(a.forward(x, {}, Mode::train, r1).features),
            oracle::values(b.forward(x, {}, Mode::train, r2).features));
  EXPECT_EQ(oracle::values(a.forward(x, {}, Mode::eval, r3).features),
            oracle::values(a.forward(x, {}, Mode::eval, r4).features));
}

TEST(Backbone, ResidualBlockWithZeroConvsPassesCroppedInput) {
  const std::vector<std::size_t> ch{3, 3, 3, 3, 3}, pools{};
  const std::vector<double> drop(5, 0.0);
  auto spec = make_residual_spec("res", ch, pools, drop, 3);
  auto b = build_residual_backbone(spec, 2);
  for (auto& p : b.parameters()) {
    const bool block_conv = p.name.find("conv1.") == std::string::npos &&
                            (p.name.find(".weight") != std::string::npos || p.name.find(".bias") != std::string::npos) &&
                            p.name.find("bn") == std::string::npos && p.name.find("proj") == std::string::npos;
    if (block_conv)
      for (auto& v : p.tensor.mutable_values()) v = 0.0;
  }
  std::mt19937_64 data(4);
  Tensor x(Shape{1, 30, 1}, oracle::randn(30, data));
  std::mt19937_64 rng(0);
  const std::size_t taps[] = {1};
  auto out = b.forward(x, {}, Mode::eval, rng, taps);
  Tensor expect = crop_time_center(out.taps.at(1), out.features.time());
  EXPECT_EQ(out.features.time(), 30u - 2 - 4 - 4);
  EXPECT_LT(oracle::max_abs_diff(oracle::values(out.features), oracle::values(expect)), 1e-12);
}

TEST(Backbone, ResidualRequiresMarkers) {
  EXPECT_THROW(build_residual_backbone(backbone_preset("cnn15"), 0), ConfigError);
  EXPECT_NO_THROW(build_residual_backbone(backbone_preset("cnn15res"), 0));
}

TEST(Backbone, FeatureGeometry) {
  auto g = feature_geometry(backbone_preset("desk7"), 7);
  EXPECT_DOUBLE_EQ(g.stride, 16.0);
  EXPECT_EQ(g.receptive_field, 304u);
  auto g1 = feature_geometry(backbone_preset("cnn7"), 1);
  EXPECT_EQ(g1.receptive_field, 21u);
  EXPECT_DOUBLE_EQ(g1.center(0), 10.0);
  EXPECT_THROW(feature_geometry(backbone_preset("cnn7"), 8), ConfigError);
}
