#include "ecgx/heads.hpp"

#include <cmath>

#include "ecgx/errors.hpp"

namespace ecgx {

void validate(const HeadSpec& head) {
  if (head.classes < 2) throw ConfigError("head: at least two classes are required");
  if (head.fusion == Fusion::single && !head.taps.empty()) {
    throw ConfigError("head: intermediate taps need fusion = concat or mean-vote");
  }
  if (head.fusion != Fusion::single && head.taps.empty()) {
    throw ConfigError("head: fusion = " + std::string(fusion_name(head.fusion)) + " needs at least one tap");
  }
}

PoolKind parse_pool_kind(std::string_view text) {
  if (text == "gap" || text == "average") return PoolKind::average;
  if (text == "gmp" || text == "max") return PoolKind::max;
  if (text == "sum") return PoolKind::sum;
  throw ConfigError("unknown pooling '" + std::string(text) + "' (expected gap or gmp)");
}

std::string_view pool_kind_name(PoolKind kind) {
  switch (kind) {
    case PoolKind::average: return "gap";
    case PoolKind::max: return "gmp";
    case PoolKind::sum: return "sum";
  }
  return "?";
}

Fusion parse_fusion(std::string_view text) {
  if (text == "single") return Fusion::single;
  if (text == "concat") return Fusion::concat;
  if (text == "mean-vote" || text == "mean_vote") return Fusion::mean_vote;
  throw ConfigError("unknown fusion '" + std::string(text) + "' (expected single, concat or mean-vote)");
}

std::string_view fusion_name(Fusion fusion) {
  switch (fusion) {
    case Fusion::single: return "single";
    case Fusion::concat: return "concat";
    case Fusion::mean_vote: return "mean-vote";
  }
  return "?";
}

Classifier Classifier::make(std::size_t features, std::size_t classes, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(features * classes);
  for (auto& v : w) v = dist(rng);
  Classifier c;
  c.weight = Tensor(Shape{1, features, classes}, std::move(w));
  c.weight.set_requires_grad(true);
  c.bias = Tensor(Shape{1, 1, classes}, 0.0);
  c.bias.set_requires_grad(true);
  return c;
}

void Classifier::append_parameters(ParameterList& params, const std::string& prefix, const std::string& group) const {
  params.push_back({prefix + ".weight", weight, group});
  params.push_back({prefix + ".bias", bias, group});
}

Tensor pool_features(const Tensor& features, std::span<const std::size_t> valid, PoolKind kind) {
  return global_pool(features, valid, kind);
}

Tensor classify(const Tensor& pooled, const Classifier& head) {
  if (pooled.time() != 1) throw ShapeError("classify: expected a pooled vector, got " + to_string(pooled.shape()));
  if (pooled.channels() != head.features()) {
    throw ShapeError("classify: pooled vector has " + std::to_string(pooled.channels()) +
                     " features, classifier expects " + std::to_string(head.features()));
  }
  return linear(pooled, head.weight, head.bias);
}

Tensor fuse_mean_vote(std::span<const Tensor> logits) {
  if (logits.empty()) throw ShapeError("fuse_mean_vote: no heads");
  Tensor acc = softmax(logits[0]);
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i].shape() != logits[0].shape()) {
      throw ShapeError("fuse_mean_vote: head " + std::to_string(i) + " has shape " + to_string(logits[i].shape()) +
                       ", head 0 has " + to_string(logits[0].shape()));
    }
    acc = add(acc, softmax(logits[i]));
  }
  return logits.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(logits.size()));
}

}  // namespace ecgx
