#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/attention.hpp"
#include "ecgx/backbone.hpp"
#include "ecgx/checkpoint.hpp"
#include "ecgx/heads.hpp"
#include "ecgx/recurrent.hpp"

namespace ecgx {

enum class Aggregator { pooling, recurrent, attention };

Aggregator parse_aggregator(std::string_view text);  // pool | lstm | attention
std::string_view aggregator_name(Aggregator a);

struct AttentionSpec {
  std::size_t tap = 13;
  std::size_t dim = 0;  // 0 = channel count of the tap
};

struct ModelSpec {
  BackboneSpec backbone = backbone_preset("cnn7");
  Aggregator aggregator = Aggregator::pooling;
  /// Pooling kind, intermediate taps and fusion. For the attention
  /// aggregator the fusion combines the gated path with the global path.
  HeadSpec head;
  RecurrentSpec recurrent;
  AttentionSpec attention;
  std::size_t input_length = kPaddedLength;
};

void validate(const ModelSpec& spec);

struct ModelOutput {
  std::vector<Tensor> logits;  // one per classifier, [B,1,C]
  Tensor probabilities;        // [B,1,C]
  Tensor alpha;                // attention coefficients [B,T_tap,1] (attention models)
  BackboneOutput backbone;
  std::optional<RecurrentOutput> recurrent;

  std::vector<int> predictions() const;
};

/// Which part of which classifier looks at which feature map.
struct PooledSource {
  std::size_t conv_index = 0;  // backbone conv layer feeding this vector
  std::size_t classifier = 0;
  std::size_t offset = 0;  // first classifier input row belonging to this source
  std::size_t channels = 0;
  bool gated = false;  // attention-gated sum pool rather than a global pool
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }

  /// x: [B,Lpad,1]; `lengths` are the true (unpadded) record lengths.
  ModelOutput forward(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, std::mt19937_64& rng,
                      bool capture_gates = false) const;
  /// Eval-mode forward.
  ModelOutput infer(const Tensor& x, std::span<const std::size_t> lengths, bool capture_gates = false) const;

  /// Sum of per-classifier cross-entropies.
  Tensor loss(const ModelOutput& out, std::span<const int> targets) const;

  /// Declaration order: backbone, aggregator, classifiers. Groups are
  /// "backbone" and "head".
  ParameterList parameters() const;
  std::vector<Buffer> buffers();
  std::size_t parameter_count() const;

  const Backbone& backbone() const { return backbone_; }
  const std::vector<Classifier>& classifiers() const { return classifiers_; }
  const RecurrentStack* recurrent() const { return recurrent_ ? &*recurrent_ : nullptr; }
  RecurrentStack* recurrent() { return recurrent_ ? &*recurrent_ : nullptr; }
  const GateParams* gate() const { return gate_ ? &*gate_ : nullptr; }
  GateParams* gate() { return gate_ ? &*gate_ : nullptr; }
  std::vector<PooledSource> pooled_sources() const;
  /// Length of the backbone output for the configured input length.
  std::size_t feature_steps() const;

  /// Parameters followed by BN running statistics.
  std::vector<CheckpointEntry> state() const;
  /// Matches entries by name; entries under "opt." or "__meta." are ignored.
  void load_state(std::span<const CheckpointEntry> entries);
  /// Copies backbone parameters and statistics from a model with the same backbone layout.
  void copy_backbone_from(const Model& other);

 private:
  ModelSpec spec_;
  Backbone backbone_;
  std::optional<RecurrentStack> recurrent_;
  std::optional<GateParams> gate_;
  std::vector<Classifier> classifiers_;
};

/// Closed-form parameter count.
std::size_t count_model_parameters(const ModelSpec& spec);
std::size_t count_parameters(const Model& model);

Model assemble_convlstm(BackboneSpec backbone, RecurrentSpec recurrent, HeadSpec head, std::uint64_t seed,
                        std::size_t input_length = kPaddedLength);
Model build_gated_model(BackboneSpec backbone, std::size_t tap, Fusion fusion, std::uint64_t seed,
                        std::size_t input_length = kPaddedLength, std::size_t classes = 4, std::size_t dim = 0);

}  // namespace ecgx
