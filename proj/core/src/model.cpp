#include "ecgx/model.hpp"

#include <algorithm>
#include <map>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"

namespace ecgx {

Aggregator parse_aggregator(std::string_view text) {
  if (text == "pool" || text == "pooling") return Aggregator::pooling;
  if (text == "recurrent" || text == "lstm" || text == "rnn" || text == "gru") return Aggregator::recurrent;
  if (text == "attention") return Aggregator::attention;
  throw ConfigError("unknown aggregator '" + std::string(text) + "' (expected pool, recurrent or attention)");
}

std::string_view aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::pooling: return "pool";
    case Aggregator::recurrent: return "recurrent";
    case Aggregator::attention: return "attention";
  }
  return "?";
}

void validate(const ModelSpec& spec) {
  validate(spec.backbone);
  const std::size_t convs = spec.backbone.conv_count();
  for (std::size_t t : spec.head.taps) {
    if (t == 0 || t >= convs) {
      throw ConfigError("head: tap " + std::to_string(t) + " must name an intermediate conv layer (1.." +
                        std::to_string(convs - 1) + ")");
    }
  }
  switch (spec.aggregator) {
    case Aggregator::pooling:
      validate(spec.head);
      break;
    case Aggregator::recurrent:
      validate(spec.recurrent);
      if (spec.head.fusion != Fusion::single || !spec.head.taps.empty()) {
        throw ConfigError("recurrent models use a single classifier without taps");
      }
      break;
    case Aggregator::attention:
      if (spec.head.fusion == Fusion::single) {
        throw ConfigError("attention models need fusion = concat or mean-vote to combine the two paths");
      }
      if (!spec.head.taps.empty()) throw ConfigError("attention models take their tap from [attention] tap");
      if (spec.attention.tap == 0 || spec.attention.tap >= convs) {
        throw ConfigError("attention: tap " + std::to_string(spec.attention.tap) +
                          " must name an intermediate conv layer (1.." + std::to_string(convs - 1) + ")");
      }
      break;
  }
  if (spec.head.classes < 2) throw ConfigError("head: at least two classes are required");
  (void)layer_table(spec.backbone, spec.input_length);
}

std::vector<int> ModelOutput::predictions() const {
  const std::size_t B = probabilities.batch(), C = probabilities.channels();
  auto p = probabilities.values();
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = p.data() + b * C;
    out[b] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

namespace {

std::size_t attention_dim(const ModelSpec& spec) {
  return spec.attention.dim ? spec.attention.dim : spec.backbone.channels_at(spec.attention.tap);
}

std::vector<std::size_t> classifier_inputs(const ModelSpec& spec, std::size_t readout) {
  const std::size_t last = spec.backbone.out_channels();
  std::vector<std::size_t> sources;
  switch (spec.aggregator) {
    case Aggregator::pooling:
      for (std::size_t t : spec.head.taps) sources.push_back(spec.backbone.channels_at(t));
      sources.push_back(last);
      break;
    case Aggregator::recurrent:
      return {readout + (spec.recurrent.readout == Readout::last_pool ? last : 0)};
    case Aggregator::attention:
      sources = {spec.backbone.channels_at(spec.attention.tap), last};
      break;
  }
  if (spec.head.fusion == Fusion::mean_vote) return sources;
  std::size_t total = 0;
  for (auto s : sources) total += s;
  return {total};
}

std::size_t recurrent_parameters(const RecurrentSpec& r, std::size_t input) {
  const std::size_t G = CellWeights::gates(r.cell) * r.hidden;
  const std::size_t dirs = r.bidirectional ? 2 : 1;
  std::size_t total = 0, in = input;
  for (std::size_t l = 0; l < r.layers; ++l) {
    const std::size_t per = G * (in + r.hidden) + (r.cell == CellKind::rnn ? 0 : 2 * G);
    total += dirs * per;
    in = r.hidden * dirs;
  }
  return total;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  validate(spec_);
  std::mt19937_64 rng(seed);
  backbone_ = Backbone(spec_.backbone, rng());
  std::size_t readout = 0;
  if (spec_.aggregator == Aggregator::recurrent) {
    recurrent_.emplace(spec_.recurrent, spec_.backbone.out_channels(), rng);
    readout = recurrent_->readout_size();
  } else if (spec_.aggregator == Aggregator::attention) {
    gate_ = GateParams::make(spec_.backbone.channels_at(spec_.attention.tap), spec_.backbone.out_channels(),
                             attention_dim(spec_), rng);
  }
  for (std::size_t in : classifier_inputs(spec_, readout)) {
    classifiers_.push_back(Classifier::make(in, spec_.head.classes, rng));
  }
}

std::size_t Model::feature_steps() const { return output_length(spec_.backbone, spec_.input_length); }

ModelOutput Model::forward(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, std::mt19937_64& rng,
                           bool capture_gates) const {
  std::vector<std::size_t> taps = spec_.head.taps;
  if (spec_.aggregator == Aggregator::attention) taps = {spec_.attention.tap};

  ModelOutput out;
  out.backbone = backbone_.forward(x, lengths, mode, rng, taps);
  const BackboneOutput& bo = out.backbone;
  const bool masked = spec_.head.masked;
  auto valid_of = [&](const std::vector<std::size_t>& v) {
    return masked ? std::span<const std::size_t>(v) : std::span<const std::size_t>();
  };
  const PoolKind kind = spec_.head.pooling;

  std::vector<Tensor> vectors;
  switch (spec_.aggregator) {
    case Aggregator::pooling:
      for (std::size_t t : spec_.head.taps) {
        vectors.push_back(pool_features(bo.taps.at(t), valid_of(bo.tap_valid.at(t)), kind));
      }
      vectors.push_back(pool_features(bo.features, valid_of(bo.valid), kind));
      break;
    case Aggregator::recurrent: {
      out.recurrent = recurrent_->run(bo.features, bo.valid, capture_gates);
      Tensor r = out.recurrent->readout;
      if (spec_.recurrent.readout == Readout::last_pool) {
        const Tensor parts[] = {r, pool_features(bo.features, valid_of(bo.valid), kind)};
        r = concat_channels(parts);
      }
      vectors.push_back(r);
      break;
    }
    case Aggregator::attention: {
      const std::size_t t = spec_.attention.tap;
      const Tensor& x_tap = bo.taps.at(t);
      out.alpha = attention_coefficients(x_tap, bo.features, *gate_);
      vectors.push_back(gate_and_pool(x_tap, out.alpha, valid_of(bo.tap_valid.at(t))));
      vectors.push_back(pool_features(bo.features, valid_of(bo.valid), kind));
      break;
    }
  }

  if (classifiers_.size() == vectors.size()) {
    for (std::size_t i = 0; i < vectors.size(); ++i) out.logits.push_back(classify(vectors[i], classifiers_[i]));
  } else {
    out.logits.push_back(classify(vectors.size() == 1 ? vectors[0] : concat_channels(vectors), classifiers_[0]));
  }
  out.probabilities = out.logits.size() == 1 ? softmax(out.logits[0]) : fuse_mean_vote(out.logits);
  return out;
}

ModelOutput Model::infer(const Tensor& x, std::span<const std::size_t> lengths, bool capture_gates) const {
  std::mt19937_64 unused(0);
  return forward(x, lengths, Mode::eval, unused, capture_gates);
}

Tensor Model::loss(const ModelOutput& out, std::span<const int> targets) const {
  Tensor total;
  for (const auto& logits : out.logits) {
    Tensor ce = cross_entropy(logits, targets);
    total = total.defined() ? add(total, ce) : ce;
  }
  return total;
}

ParameterList Model::parameters() const {
  ParameterList params = backbone_.parameters();
  if (recurrent_) {
    auto r = recurrent_->parameters("head");
    params.insert(params.end(), r.begin(), r.end());
  }
  if (gate_) gate_->append_parameters(params, "attention", "head");
  for (std::size_t i = 0; i < classifiers_.size(); ++i) {
    classifiers_[i].append_parameters(params, classifiers_.size() == 1 ? "classifier" : "classifier" + std::to_string(i),
                                      "head");
  }
  return params;
}

std::vector<Buffer> Model::buffers() { return backbone_.buffers(); }

std::size_t Model::parameter_count() const { return count_parameters(parameters()); }

std::vector<PooledSource> Model::pooled_sources() const {
  std::vector<PooledSource> out;
  const bool vote = spec_.head.fusion == Fusion::mean_vote;
  const std::size_t last = spec_.backbone.conv_count();
  std::size_t offset = 0, index = 0;
  auto push = [&](std::size_t conv, bool gated) {
    const std::size_t ch = spec_.backbone.channels_at(conv);
    out.push_back({conv, vote ? index : 0, vote ? 0 : offset, ch, gated});
    offset += ch;
    ++index;
  };
  switch (spec_.aggregator) {
    case Aggregator::pooling:
      for (std::size_t t : spec_.head.taps) push(t, false);
      push(last, false);
      break;
    case Aggregator::recurrent:
      if (spec_.recurrent.readout == Readout::last_pool) {
        out.push_back({last, 0, recurrent_->readout_size(), spec_.backbone.out_channels(), false});
      }
      break;
    case Aggregator::attention:
      push(spec_.attention.tap, true);
      push(last, false);
      break;
  }
  return out;
}

std::vector<CheckpointEntry> Model::state() const {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : parameters()) entries.push_back(make_entry(p.name, p.tensor.values(), p.tensor.shape()));
  for (const auto& b : const_cast<Model*>(this)->buffers()) {
    entries.push_back(make_entry(b.name, *b.values, Shape{1, 1, b.values->size()}));
  }
  return entries;
}

void Model::load_state(std::span<const CheckpointEntry> entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing '" + name + "'");
    if (it->second->dims != compact_dims(shape)) {
      throw FormatError("checkpoint entry '" + name + "' has a different shape than the model's " + to_string(shape));
    }
    return *it->second;
  };
  auto params = parameters();
  for (auto& p : params) {
    const auto& e = take(p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_values();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
  for (auto& b : buffers()) {
    const auto& e = take(b.name, Shape{1, 1, b.values->size()});
    std::copy(e.values.begin(), e.values.end(), b.values->begin());
  }
  for (const auto& e : entries) {
    if (e.name.rfind("opt.", 0) == 0 || e.name.rfind("__meta.", 0) == 0) continue;
    if (!std::any_of(params.begin(), params.end(), [&](const Parameter& p) { return p.name == e.name; })) {
      bool buffer = false;
      for (auto& b : buffers()) buffer = buffer || b.name == e.name;
      if (!buffer) throw FormatError("checkpoint entry '" + e.name + "' does not belong to this model");
    }
  }
}

void Model::copy_backbone_from(const Model& other) {
  if (format_layers(other.spec_.backbone) != format_layers(spec_.backbone) ||
      other.spec_.backbone.in_channels != spec_.backbone.in_channels) {
    throw ConfigError("copy_backbone_from: backbone layouts differ");
  }
  auto src = other.backbone_.parameters();
  auto dst = backbone_.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto from = src[i].tensor.values();
    auto to = dst[i].tensor.mutable_values();
    std::copy(from.begin(), from.end(), to.begin());
  }
  auto sb = const_cast<Model&>(other).buffers();
  auto db = buffers();
  for (std::size_t i = 0; i < db.size(); ++i) *db[i].values = *sb[i].values;
}

std::size_t count_model_parameters(const ModelSpec& spec) {
  validate(spec);
  std::size_t total = count_backbone_parameters(spec.backbone);
  std::size_t readout = 0;
  if (spec.aggregator == Aggregator::recurrent) {
    total += recurrent_parameters(spec.recurrent, spec.backbone.out_channels());
    readout = spec.recurrent.hidden * (spec.recurrent.bidirectional ? 2 : 1);
  } else if (spec.aggregator == Aggregator::attention) {
    const std::size_t A = attention_dim(spec);
    total += spec.backbone.channels_at(spec.attention.tap) * A + spec.backbone.out_channels() * A + 2 * A + 1;
  }
  for (std::size_t in : classifier_inputs(spec, readout)) total += in * spec.head.classes + spec.head.classes;
  return total;
}

std::size_t count_parameters(const Model& model) { return model.parameter_count(); }

Model assemble_convlstm(BackboneSpec backbone, RecurrentSpec recurrent, HeadSpec head, std::uint64_t seed,
                        std::size_t input_length) {
  ModelSpec spec;
  spec.backbone = std::move(backbone);
  spec.aggregator = Aggregator::recurrent;
  spec.recurrent = recurrent;
  spec.head = std::move(head);
  spec.input_length = input_length;
  return Model(std::move(spec), seed);
}

Model build_gated_model(BackboneSpec backbone, std::size_t tap, Fusion fusion, std::uint64_t seed,
                        std::size_t input_length, std::size_t classes, std::size_t dim) {
  ModelSpec spec;
  spec.backbone = std::move(backbone);
  spec.aggregator = Aggregator::attention;
  spec.attention.tap = tap;
  spec.attention.dim = dim;
  spec.head.fusion = fusion;
  spec.head.classes = classes;
  spec.input_length = input_length;
  const std::size_t steps = conv_output_length(spec.backbone, input_length, tap);
  const std::size_t last = output_length(spec.backbone, input_length);
  if (steps <= last) {
    throw ConfigError("attention tap conv" + std::to_string(tap) + " has " + std::to_string(steps) +
                      " steps, no finer than the last layer's " + std::to_string(last));
  }
  return Model(std::move(spec), seed);
}

}  // namespace ecgx
