#include "ecgx/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ecgx/errors.hpp"

namespace ecgx {

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, double dropout) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.channels_out = channels;
  s.kernel = kernel;
  s.dropout = dropout;
  return s;
}

LayerSpec LayerSpec::pool() {
  LayerSpec s;
  s.kind = LayerKind::avgpool;
  s.kernel = 2;
  s.batch_norm = false;
  s.relu = false;
  return s;
}

LayerSpec LayerSpec::residual_begin() {
  LayerSpec s;
  s.kind = LayerKind::residual_begin;
  s.kernel = 0;
  s.batch_norm = false;
  s.relu = false;
  return s;
}

LayerSpec LayerSpec::residual_end() {
  LayerSpec s = residual_begin();
  s.kind = LayerKind::residual_end;
  return s;
}

std::size_t BackboneSpec::conv_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::conv; }));
}

std::size_t BackboneSpec::channels_at(std::size_t conv_index) const {
  std::size_t seen = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv && ++seen == conv_index) return l.channels_out;
  }
  throw ConfigError(name + ": no conv layer " + std::to_string(conv_index));
}

std::size_t BackboneSpec::out_channels() const { return channels_at(conv_count()); }

bool BackboneSpec::residual() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::residual_begin; });
}

std::vector<double> ramp_dropout(std::size_t layers, double peak) {
  std::vector<double> p(layers, 0.0);
  if (layers < 3) return p;
  const double interior = static_cast<double>(layers - 2);
  for (std::size_t i = 1; i + 1 < layers; ++i) p[i] = peak * static_cast<double>(i) / interior;
  return p;
}

namespace {

const std::vector<std::size_t> kCnn4Channels{16, 32, 64, 128};
const std::vector<std::size_t> kCnn7Channels{16, 32, 32, 64, 64, 128, 128};
const std::vector<std::size_t> kCnn15Channels{16, 32, 32, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256};
const std::vector<std::size_t> kCnn17Channels{16,  32,  32,  64,  64,  64,  64,  128, 128,
                                              128, 128, 256, 256, 256, 256, 512, 512};

struct PaperLength {
  std::string_view name;
  std::size_t conv_index;  // 0 = final output
  std::size_t length;
};

constexpr PaperLength kPaperLengths[] = {
    {"cnn4", 0, 4535}, {"cnn7", 0, 531}, {"cnn15", 0, 206}, {"cnn15res", 0, 206}, {"cnn17", 0, 63}, {"cnn17", 13, 492},
};

std::vector<std::size_t> every_gap_but_first(std::size_t n) {
  std::vector<std::size_t> v;
  for (std::size_t i = 2; i < n; ++i) v.push_back(i);
  return v;
}

std::vector<std::size_t> odd_from_three(std::size_t last) {
  std::vector<std::size_t> v;
  for (std::size_t i = 3; i <= last; i += 2) v.push_back(i);
  return v;
}

}  // namespace

std::vector<std::string> backbone_preset_names() { return {"cnn4", "cnn7", "cnn15", "cnn15res", "cnn17", "desk7"}; }

BackboneSpec backbone_preset(std::string_view name) {
  if (name == "cnn4") {
    auto pools = every_gap_but_first(4);
    auto drop = ramp_dropout(4);
    return make_plain_spec("cnn4", kCnn4Channels, pools, drop);
  }
  if (name == "cnn7") {
    auto pools = every_gap_but_first(7);
    const std::vector<double> drop{0.0, 0.2, 0.3, 0.4, 0.5, 0.5, 0.0};
    return make_plain_spec("cnn7", kCnn7Channels, pools, drop);
  }
  if (name == "cnn15") {
    auto pools = odd_from_three(13);
    auto drop = ramp_dropout(15);
    return make_plain_spec("cnn15", kCnn15Channels, pools, drop);
  }
  if (name == "cnn15res") {
    auto pools = odd_from_three(13);
    auto drop = ramp_dropout(15);
    return make_residual_spec("cnn15res", kCnn15Channels, pools, drop);
  }
  if (name == "cnn17") {
    auto pools = odd_from_three(15);
    auto drop = ramp_dropout(17);
    return make_plain_spec("cnn17", kCnn17Channels, pools, drop);
  }
  if (name == "desk7") {
    const std::vector<std::size_t> channels{8, 16, 16, 32, 32, 64, 64};
    const std::vector<std::size_t> pools{2, 3, 4, 5};
    const std::vector<double> drop{0.0, 0.2, 0.3, 0.4, 0.5, 0.5, 0.0};
    return make_plain_spec("desk7", channels, pools, drop, 7);
  }
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected cnn4, cnn7, cnn15, cnn15res, cnn17 or desk7)");
}

BackboneSpec make_plain_spec(std::string name, std::span<const std::size_t> channels,
                             std::span<const std::size_t> pool_after, std::span<const double> dropout,
                             std::size_t kernel) {
  if (!dropout.empty() && dropout.size() != channels.size()) {
    throw ConfigError(name + ": dropout series length does not match layer count");
  }
  BackboneSpec spec;
  spec.name = std::move(name);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    spec.layers.push_back(LayerSpec::conv(channels[i], kernel, dropout.empty() ? 0.0 : dropout[i]));
    if (std::find(pool_after.begin(), pool_after.end(), i + 1) != pool_after.end()) {
      spec.layers.push_back(LayerSpec::pool());
    }
  }
  return spec;
}

BackboneSpec make_residual_spec(std::string name, std::span<const std::size_t> channels,
                                std::span<const std::size_t> pool_after, std::span<const double> dropout,
                                std::size_t kernel) {
  if (channels.size() < 3 || channels.size() % 2 == 0) {
    throw ConfigError(name + ": residual layout needs one stem conv plus blocks of two convs");
  }
  if (!dropout.empty() && dropout.size() != channels.size()) {
    throw ConfigError(name + ": dropout series length does not match layer count");
  }
  auto pooled = [&](std::size_t idx) {
    return std::find(pool_after.begin(), pool_after.end(), idx) != pool_after.end();
  };
  BackboneSpec spec;
  spec.name = std::move(name);
  auto drop = [&](std::size_t i) { return dropout.empty() ? 0.0 : dropout[i]; };
  spec.layers.push_back(LayerSpec::conv(channels[0], kernel, drop(0)));
  if (pooled(1)) spec.layers.push_back(LayerSpec::pool());
  for (std::size_t i = 1; i < channels.size(); i += 2) {
    if (pooled(i + 1)) throw ConfigError(spec.name + ": pooling inside a residual block");
    spec.layers.push_back(LayerSpec::residual_begin());
    spec.layers.push_back(LayerSpec::conv(channels[i], kernel, drop(i)));
    spec.layers.push_back(LayerSpec::conv(channels[i + 1], kernel, drop(i + 1)));
    spec.layers.push_back(LayerSpec::residual_end());
    if (pooled(i + 2)) spec.layers.push_back(LayerSpec::pool());
  }
  return spec;
}

void validate(const BackboneSpec& spec) {
  if (spec.in_channels == 0) throw ConfigError(spec.name + ": input channels must be positive");
  if (spec.conv_count() == 0) throw ConfigError(spec.name + ": backbone has no conv layer");
  int depth = 0;
  bool first = true;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        if (l.kernel == 0) throw ConfigError(spec.name + ": conv kernel must be positive");
        if (l.channels_out == 0) throw ConfigError(spec.name + ": conv channels must be positive");
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) {
          throw ConfigError(spec.name + ": dropout must lie in [0,1)");
        }
        break;
      case LayerKind::avgpool:
        if (first) throw ConfigError(spec.name + ": layout may not start with a pool");
        if (depth != 0) throw ConfigError(spec.name + ": pooling inside a residual block");
        break;
      case LayerKind::residual_begin:
        if (++depth > 1) throw ConfigError(spec.name + ": nested residual blocks are not supported");
        break;
      case LayerKind::residual_end:
        if (--depth < 0) throw ConfigError(spec.name + ": residual end without a matching begin");
        break;
    }
    first = false;
  }
  if (depth != 0) throw ConfigError(spec.name + ": unterminated residual block");
}

std::string format_layers(const BackboneSpec& spec) {
  std::ostringstream out;
  bool first = true;
  for (const auto& l : spec.layers) {
    if (!first) out << ", ";
    first = false;
    switch (l.kind) {
      case LayerKind::conv:
        out << "conv:" << l.channels_out << ':' << l.kernel << ':'
            << std::setprecision(std::numeric_limits<double>::max_digits10) << l.dropout;
        if (!l.batch_norm) out << ":nobn";
        if (!l.relu) out << ":linear";
        break;
      case LayerKind::avgpool: out << "pool"; break;
      case LayerKind::residual_begin: out << "res{"; break;
      case LayerKind::residual_end: out << "}res"; break;
    }
  }
  return out.str();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::size_t parse_count(const std::string& s, const std::string& token) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v <= 0) throw ConfigError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("layer '" + token + "': expected a positive integer, got '" + s + "'");
  }
}

}  // namespace

std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> layers;
  for (const auto& token : split(text, ',')) {
    if (token.empty()) continue;
    if (token == "pool") {
      layers.push_back(LayerSpec::pool());
    } else if (token == "res{") {
      layers.push_back(LayerSpec::residual_begin());
    } else if (token == "}res") {
      layers.push_back(LayerSpec::residual_end());
    } else {
      auto fields = split(token, ':');
      if (fields[0] != "conv" || fields.size() < 2) {
        throw ConfigError("unknown layer token '" + token + "' (expected conv:C[:K[:p]], pool, res{ or }res)");
      }
      LayerSpec l = LayerSpec::conv(parse_count(fields[1], token));
      if (fields.size() > 2) l.kernel = parse_count(fields[2], token);
      if (fields.size() > 3) {
        try {
          l.dropout = std::stod(fields[3]);
        } catch (const std::exception&) {
          throw ConfigError("layer '" + token + "': bad dropout '" + fields[3] + "'");
        }
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) {
          throw ConfigError("layer '" + token + "': dropout must lie in [0, 1), got '" + fields[3] + "'");
        }
      }
      for (std::size_t i = 4; i < fields.size(); ++i) {
        if (fields[i] == "nobn") {
          l.batch_norm = false;
        } else if (fields[i] == "linear") {
          l.relu = false;
        } else {
          throw ConfigError("layer '" + token + "': unknown flag '" + fields[i] + "'");
        }
      }
      layers.push_back(l);
    }
  }
  return layers;
}

std::vector<LayerRow> layer_table(const BackboneSpec& spec, std::size_t input_length) {
  validate(spec);
  std::vector<LayerRow> rows;
  rows.push_back({"input", input_length, spec.in_channels, 0, 0});
  std::size_t len = input_length, ch = spec.in_channels, conv = 0;
  std::size_t block_len = 0, block_ch = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        ++conv;
        const std::string label = "conv" + std::to_string(conv);
        if (len < l.kernel) {
          throw ShapeError(spec.name + " " + label + ": input length " + std::to_string(len) +
                           " is shorter than kernel " + std::to_string(l.kernel));
        }
        len = len - l.kernel + 1;
        std::size_t params = l.kernel * ch * l.channels_out + l.channels_out;
        if (l.batch_norm) params += 2 * l.channels_out;
        ch = l.channels_out;
        rows.push_back({label, len, ch, params, conv});
        break;
      }
      case LayerKind::avgpool:
        if (len < 2) throw ShapeError(spec.name + " pool after conv" + std::to_string(conv) + ": length below 2");
        len = (len - 2) / 2 + 1;
        rows.push_back({"pool", len, ch, 0, 0});
        break;
      case LayerKind::residual_begin:
        block_len = len;
        block_ch = ch;
        break;
      case LayerKind::residual_end: {
        (void)block_len;
        const std::size_t params = block_ch == ch ? 0 : block_ch * ch + ch;
        rows.push_back({"res+", len, ch, params, 0});
        break;
      }
    }
  }
  return rows;
}

std::size_t output_length(const BackboneSpec& spec, std::size_t input_length) {
  return layer_table(spec, input_length).back().length;
}

std::size_t conv_output_length(const BackboneSpec& spec, std::size_t input_length, std::size_t conv_index) {
  for (const auto& row : layer_table(spec, input_length)) {
    if (row.conv_index == conv_index) return row.length;
  }
  throw ConfigError(spec.name + ": no conv layer " + std::to_string(conv_index));
}

std::size_t count_backbone_parameters(const BackboneSpec& spec) {
  validate(spec);
  std::size_t total = 0, ch = spec.in_channels, block_ch = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv) {
      total += l.kernel * ch * l.channels_out + l.channels_out;
      if (l.batch_norm) total += 2 * l.channels_out;
      ch = l.channels_out;
    } else if (l.kind == LayerKind::residual_begin) {
      block_ch = ch;
    } else if (l.kind == LayerKind::residual_end && block_ch != ch) {
      total += block_ch * ch + ch;
    }
  }
  return total;
}

FeatureGeometry feature_geometry(const BackboneSpec& spec, std::size_t conv_index) {
  FeatureGeometry g;
  std::size_t conv = 0;
  double jump = 1.0;
  double rf = 1.0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv) {
      rf += static_cast<double>(l.kernel - 1) * jump;
      if (++conv == conv_index) break;
    } else if (l.kind == LayerKind::avgpool) {
      rf += jump;
      jump *= 2.0;
    }
  }
  if (conv_index == 0 || conv_index > conv) throw ConfigError(spec.name + ": no conv layer " + std::to_string(conv_index));
  g.stride = jump;
  g.receptive_field = static_cast<std::size_t>(rf);
  return g;
}

std::size_t propagate_valid(std::size_t true_length, std::size_t padded_length, std::size_t steps) {
  if (padded_length == 0 || steps == 0) return 0;
  const double v = std::round(static_cast<double>(steps) * static_cast<double>(true_length) /
                              static_cast<double>(padded_length));
  return std::clamp<std::size_t>(static_cast<std::size_t>(v), 1, steps);
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape.size());
  for (auto& x : v) x = dist(rng);
  Tensor t(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor filled(Shape shape, double value) {
  Tensor t(shape, value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Backbone::Backbone(BackboneSpec spec, std::uint64_t seed, std::string prefix)
    : spec_(std::move(spec)), prefix_(std::move(prefix)) {
  validate(spec_);
  for (const auto& paper : kPaperLengths) {
    if (paper.name != spec_.name) continue;
    const std::size_t got = paper.conv_index == 0 ? output_length(spec_, kPaddedLength)
                                                  : conv_output_length(spec_, kPaddedLength, paper.conv_index);
    if (got != paper.length) {
      throw ConfigError(spec_.name + ": layout yields length " + std::to_string(got) + " for input " +
                        std::to_string(kPaddedLength) + (paper.conv_index ? " after conv" + std::to_string(paper.conv_index) : "") +
                        ", expected " + std::to_string(paper.length));
    }
  }

  std::mt19937_64 rng(seed);
  std::size_t ch = spec_.in_channels, conv = 0, block_ch = 0;
  for (const auto& l : spec_.layers) {
    Layer layer;
    layer.kind = l.kind;
    switch (l.kind) {
      case LayerKind::conv:
        layer.conv_index = ++conv;
        layer.dropout = l.dropout;
        layer.batch_norm = l.batch_norm;
        layer.relu = l.relu;
        layer.weight = he_normal(Shape{l.kernel, ch, l.channels_out}, l.kernel * ch, rng);
        layer.bias = filled(Shape{1, 1, l.channels_out}, 0.0);
        if (l.batch_norm) {
          layer.gamma = filled(Shape{1, 1, l.channels_out}, 1.0);
          layer.beta = filled(Shape{1, 1, l.channels_out}, 0.0);
          layer.stats = BatchNormStats(l.channels_out);
        }
        ch = l.channels_out;
        break;
      case LayerKind::residual_begin:
        block_ch = ch;
        break;
      case LayerKind::residual_end:
        layer.conv_index = conv;
        if (block_ch != ch) {
          layer.weight = he_normal(Shape{1, block_ch, ch}, block_ch, rng);
          layer.bias = filled(Shape{1, 1, ch}, 0.0);
        }
        break;
      case LayerKind::avgpool:
        break;
    }
    layers_.push_back(std::move(layer));
  }
}

BackboneOutput Backbone::forward(const Tensor& x, std::span<const std::size_t> true_lengths, Mode mode,
                                 std::mt19937_64& rng, std::span<const std::size_t> taps) const {
  if (x.channels() != spec_.in_channels) {
    throw ShapeError(spec_.name + ": expected " + std::to_string(spec_.in_channels) + " input channel(s), got " +
                     std::to_string(x.channels()));
  }
  const std::size_t B = x.batch(), Lpad = x.time();
  if (!true_lengths.empty() && true_lengths.size() != B) {
    throw ShapeError(spec_.name + ": " + std::to_string(true_lengths.size()) + " valid lengths for batch of " +
                     std::to_string(B));
  }
  auto valid_for = [&](std::size_t steps) {
    std::vector<std::size_t> v(B, steps);
    if (!true_lengths.empty()) {
      for (std::size_t b = 0; b < B; ++b) v[b] = propagate_valid(true_lengths[b], Lpad, steps);
    }
    return v;
  };

  for (std::size_t t : taps) {
    if (t == 0 || t > spec_.conv_count()) {
      throw ConfigError(spec_.name + ": tap " + std::to_string(t) + " is not a conv layer");
    }
  }

  BackboneOutput out;
  Tensor h = x;
  Tensor skip;
  for (const auto& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::conv: {
        h = conv1d(h, layer.weight, layer.bias, prefix_ + ".conv" + std::to_string(layer.conv_index));
        if (layer.batch_norm) h = batch_norm1d(h, layer.gamma, layer.beta, layer.stats, mode);
        if (layer.relu) h = relu(h);
        h = dropout(h, layer.dropout, mode, rng);
        if (std::find(taps.begin(), taps.end(), layer.conv_index) != taps.end()) {
          out.taps[layer.conv_index] = h;
          out.tap_valid[layer.conv_index] = valid_for(h.time());
        }
        break;
      }
      case LayerKind::avgpool:
        h = avg_pool1d(h);
        break;
      case LayerKind::residual_begin:
        skip = h;
        break;
      case LayerKind::residual_end: {
        Tensor u = layer.weight.defined() ? linear(skip, layer.weight, layer.bias) : skip;
        h = add(h, crop_time_center(u, h.time()));
        skip = Tensor();
        break;
      }
    }
  }
  out.features = h;
  out.valid = valid_for(h.time());
  return out;
}

ParameterList Backbone::parameters() const {
  ParameterList params;
  for (const auto& layer : layers_) {
    std::string base;
    if (layer.kind == LayerKind::conv) {
      base = prefix_ + ".conv" + std::to_string(layer.conv_index);
    } else if (layer.kind == LayerKind::residual_end && layer.weight.defined()) {
      base = prefix_ + ".res" + std::to_string(layer.conv_index) + ".proj";
    } else {
      continue;
    }
    params.push_back({base + ".weight", layer.weight, "backbone"});
    params.push_back({base + ".bias", layer.bias, "backbone"});
    if (layer.gamma.defined()) {
      params.push_back({base + ".bn.gamma", layer.gamma, "backbone"});
      params.push_back({base + ".bn.beta", layer.beta, "backbone"});
    }
  }
  return params;
}

std::vector<Buffer> Backbone::buffers() {
  std::vector<Buffer> out;
  for (auto& layer : layers_) {
    if (layer.kind != LayerKind::conv || !layer.batch_norm) continue;
    const std::string base = prefix_ + ".conv" + std::to_string(layer.conv_index) + ".bn";
    out.push_back({base + ".running_mean", &layer.stats.running_mean});
    out.push_back({base + ".running_var", &layer.stats.running_var});
  }
  return out;
}

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed) { return Backbone(spec, seed); }

Backbone build_residual_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  if (!spec.residual()) throw ConfigError(spec.name + ": layout has no residual blocks");
  return Backbone(spec, seed);
}

}  // namespace ecgx
