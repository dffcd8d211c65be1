#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/ops.hpp"
#include "ecgx/optim.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

/// 61 s at 300 Hz.
inline constexpr std::size_t kPaddedLength = 18300;
inline constexpr std::size_t kPaperKernel = 21;
/// Input length of the small 100 Hz synthetic profile (10 s records).
inline constexpr std::size_t kDeskLength = 1000;

enum class LayerKind { conv, avgpool, residual_begin, residual_end };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t channels_out = 0;
  std::size_t kernel = kPaperKernel;
  double dropout = 0.0;
  bool batch_norm = true;
  bool relu = true;

  static LayerSpec conv(std::size_t channels, std::size_t kernel = kPaperKernel, double dropout = 0.0);
  static LayerSpec pool();
  static LayerSpec residual_begin();
  static LayerSpec residual_end();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct BackboneSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::size_t in_channels = 1;

  std::size_t conv_count() const;
  /// Output channel count of conv layer `conv_index` (1-based).
  std::size_t channels_at(std::size_t conv_index) const;
  std::size_t out_channels() const;
  bool residual() const;
};

/// cnn4, cnn7, cnn15, cnn15res, cnn17, plus desk7: a narrow cnn7 analog for
/// 100 Hz inputs of kDeskLength samples (kernel 7, four pools).
std::vector<std::string> backbone_preset_names();
BackboneSpec backbone_preset(std::string_view name);

/// 0 at both ends, linear ramp up to `peak` over the interior layers.
std::vector<double> ramp_dropout(std::size_t layers, double peak = 0.5);

/// Plain conv stack; `pool_after` holds 1-based conv indices followed by an average pool.
BackboneSpec make_plain_spec(std::string name, std::span<const std::size_t> channels,
                             std::span<const std::size_t> pool_after, std::span<const double> dropout,
                             std::size_t kernel = kPaperKernel);

/// First conv alone, then blocks of two convs wrapped in residual markers.
BackboneSpec make_residual_spec(std::string name, std::span<const std::size_t> channels,
                                std::span<const std::size_t> pool_after, std::span<const double> dropout,
                                std::size_t kernel = kPaperKernel);

/// Structural checks (kernel, dropout range, balanced residual markers...). Throws ConfigError.
void validate(const BackboneSpec& spec);

/// Textual layer list, e.g. "conv:16:21:0, conv:32:21:0.2, pool, res{, conv:32, conv:32, }res".
std::string format_layers(const BackboneSpec& spec);
std::vector<LayerSpec> parse_layers(std::string_view text);

struct LayerRow {
  std::string label;  // "input", "conv3", "pool", "res+"
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t params = 0;
  std::size_t conv_index = 0;  // 0 for non-conv rows
};

/// Shape walk over the layout. Throws ShapeError naming the first layer the
/// input is too short for.
std::vector<LayerRow> layer_table(const BackboneSpec& spec, std::size_t input_length);
std::size_t output_length(const BackboneSpec& spec, std::size_t input_length);
/// Length right after conv layer `conv_index` (1-based).
std::size_t conv_output_length(const BackboneSpec& spec, std::size_t input_length, std::size_t conv_index);
/// Closed-form count: conv weights+biases, BN gamma+beta, residual projections.
std::size_t count_backbone_parameters(const BackboneSpec& spec);

/// Maps feature index n of a layer to input samples: its receptive field
/// starts at n*stride and has width `receptive_field`.
struct FeatureGeometry {
  double stride = 1.0;
  std::size_t receptive_field = 1;

  double center(std::size_t n) const { return static_cast<double>(n) * stride + (receptive_field - 1) / 2.0; }
};

FeatureGeometry feature_geometry(const BackboneSpec& spec, std::size_t conv_index);

/// round(T * true_length / padded_length), clamped to [1, T].
std::size_t propagate_valid(std::size_t true_length, std::size_t padded_length, std::size_t steps);

struct BackboneOutput {
  Tensor features;                 // [B,T,C]
  std::vector<std::size_t> valid;  // per record, in feature steps
  std::map<std::size_t, Tensor> taps;
  std::map<std::size_t, std::vector<std::size_t>> tap_valid;
};

class Backbone {
 public:
  Backbone() = default;
  /// He-initialised convs, BN gamma=1 beta=0. Paper layouts are checked
  /// against their published output lengths.
  Backbone(BackboneSpec spec, std::uint64_t seed, std::string prefix = "backbone");

  Backbone(Backbone&&) = default;
  Backbone& operator=(Backbone&&) = default;
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackboneSpec& spec() const { return spec_; }

  /// x: [B,Lpad,Cin]. `true_lengths` empty means every record fills Lpad.
  /// The BN running statistics are updated in train mode only.
  BackboneOutput forward(const Tensor& x, std::span<const std::size_t> true_lengths, Mode mode,
                         std::mt19937_64& rng, std::span<const std::size_t> taps = {}) const;

  ParameterList parameters() const;
  std::vector<Buffer> buffers();

 private:
  struct Layer {
    LayerKind kind = LayerKind::conv;
    std::size_t conv_index = 0;
    double dropout = 0.0;
    bool batch_norm = true;
    bool relu = true;
    Tensor weight, bias, gamma, beta;  // projection weight/bias for residual_end
    mutable BatchNormStats stats;
  };

  BackboneSpec spec_;
  std::string prefix_;
  std::vector<Layer> layers_;
};

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed);
/// Requires residual markers in the layout (e.g. the cnn15res preset).
Backbone build_residual_backbone(const BackboneSpec& spec, std::uint64_t seed);

}  // namespace ecgx
