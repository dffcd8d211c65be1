#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/ops.hpp"
#include "ecgx/optim.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

enum class Fusion { single, concat, mean_vote };

struct HeadSpec {
  PoolKind pooling = PoolKind::max;
  /// Intermediate conv layers (1-based) pooled in addition to the last layer.
  std::vector<std::size_t> taps;
  Fusion fusion = Fusion::single;
  std::size_t classes = 4;
  /// Exclude the zero-padded tail from pooling.
  bool masked = true;
};

/// single needs no taps; concat and mean_vote need at least one.
void validate(const HeadSpec& head);

PoolKind parse_pool_kind(std::string_view text);  // gap | gmp | sum
std::string_view pool_kind_name(PoolKind kind);
Fusion parse_fusion(std::string_view text);  // single | concat | mean-vote
std::string_view fusion_name(Fusion fusion);

/// Dense layer from a pooled vector [B,1,F] to logits [B,1,C].
struct Classifier {
  Tensor weight;  // [1,F,C]
  Tensor bias;    // [1,1,C]

  /// Uniform(-1/sqrt(F), 1/sqrt(F)) weights, zero bias.
  static Classifier make(std::size_t features, std::size_t classes, std::mt19937_64& rng);

  std::size_t features() const { return weight.defined() ? weight.time() : 0; }
  std::size_t classes() const { return weight.defined() ? weight.channels() : 0; }
  void append_parameters(ParameterList& params, const std::string& prefix, const std::string& group) const;
};

/// Pools a feature map over its valid steps (all steps when `valid` is empty).
Tensor pool_features(const Tensor& features, std::span<const std::size_t> valid, PoolKind kind);

Tensor classify(const Tensor& pooled, const Classifier& head);

/// Mean of the per-head softmax probabilities.
Tensor fuse_mean_vote(std::span<const Tensor> logits);

}  // namespace ecgx
