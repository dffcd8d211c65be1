#include "ecgx/cam.hpp"

#include <algorithm>
#include <cmath>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"

namespace ecgx {

std::vector<double> cam_raw(const Tensor& features, const Tensor& weight, std::size_t cls, std::size_t offset,
                            std::size_t row) {
  const std::size_t T = features.time(), C = features.channels();
  const std::size_t F = weight.time(), K = weight.channels();
  if (cls >= K) throw ShapeError("cam: class " + std::to_string(cls) + " outside the classifier's " + std::to_string(K));
  if (offset + C > F) {
    throw ShapeError("cam: feature map with " + std::to_string(C) + " channels at offset " + std::to_string(offset) +
                     " does not fit a classifier with " + std::to_string(F) + " inputs");
  }
  if (row >= features.batch()) throw ShapeError("cam: batch row out of range");
  auto x = features.values();
  auto w = weight.values();
  std::vector<double> raw(T, 0.0);
  for (std::size_t n = 0; n < T; ++n) {
    const double* xr = x.data() + (row * T + n) * C;
    double s = 0.0;
    for (std::size_t k = 0; k < C; ++k) s += w[(offset + k) * K + cls] * xr[k];
    raw[n] = s;
  }
  return raw;
}

std::vector<double> upsample_linear(std::span<const double> raw, std::size_t length) {
  std::vector<double> out(length, 0.0);
  if (raw.empty() || length == 0) return out;
  const std::size_t T = raw.size();
  for (std::size_t s = 0; s < length; ++s) {
    const double pos = length == 1 ? 0.0 : static_cast<double>(s) * static_cast<double>(T - 1) / static_cast<double>(length - 1);
    const std::size_t i = std::min(static_cast<std::size_t>(pos), T - 1);
    const std::size_t j = std::min(i + 1, T - 1);
    const double f = pos - static_cast<double>(i);
    out[s] = raw[i] * (1.0 - f) + raw[j] * f;
  }
  return out;
}

std::vector<double> upsample_centered(std::span<const double> raw, const FeatureGeometry& geometry, std::size_t length) {
  std::vector<double> out(length, 0.0);
  if (raw.empty()) return out;
  const std::size_t T = raw.size();
  for (std::size_t s = 0; s < length; ++s) {
    const double pos = (static_cast<double>(s) - geometry.center(0)) / geometry.stride;
    if (pos <= 0.0) {
      out[s] = raw[0];
    } else if (pos >= static_cast<double>(T - 1)) {
      out[s] = raw[T - 1];
    } else {
      const std::size_t i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      out[s] = raw[i] * (1.0 - f) + raw[i + 1] * f;
    }
  }
  return out;
}

ClassActivationMap compute_cam(const Tensor& features, const Tensor& weight, std::size_t cls, std::size_t input_length,
                               std::size_t offset, const FeatureGeometry* geometry) {
  ClassActivationMap cam;
  cam.class_index = cls;
  cam.raw = cam_raw(features, weight, cls, offset);
  cam.upsampled = geometry ? upsample_centered(cam.raw, *geometry, input_length) : upsample_linear(cam.raw, input_length);
  cam.valid_steps = cam.raw.size();
  cam.valid_samples = input_length;
  return cam;
}

namespace {

struct Forward {
  ModelOutput out;
  std::size_t length = 0;
};

Forward run_single(const Model& model, const EcgRecord& record) {
  NoGradGuard no_grad;
  const EcgRecord* ptr = &record;
  PaddedBatch pb = pad_batch(std::span<const EcgRecord* const>(&ptr, 1), model.spec().input_length);
  return {model.infer(pb.signals, pb.lengths), record.true_length()};
}

ClassActivationMap cam_from_source(const Model& model, const EcgRecord& record, const PooledSource& src,
                                   std::optional<std::size_t> cls) {
  Forward f = run_single(model, record);
  const std::size_t last = model.spec().backbone.conv_count();
  const Tensor& features = src.conv_index == last ? f.out.backbone.features : f.out.backbone.taps.at(src.conv_index);
  const std::size_t valid =
      src.conv_index == last ? f.out.backbone.valid[0] : f.out.backbone.tap_valid.at(src.conv_index)[0];
  const std::size_t c = cls ? *cls : static_cast<std::size_t>(f.out.predictions()[0]);
  const FeatureGeometry g = feature_geometry(model.spec().backbone, src.conv_index);
  ClassActivationMap cam =
      compute_cam(features, model.classifiers()[src.classifier].weight, c, model.spec().input_length, src.offset, &g);
  cam.record_id = record.id;
  cam.conv_index = src.conv_index;
  cam.valid_steps = model.spec().head.masked ? valid : features.time();
  cam.valid_samples = f.length;
  return cam;
}

}  // namespace

ClassActivationMap cam_for_prediction(const Model& model, const EcgRecord& record, std::optional<std::size_t> cls) {
  const std::size_t last = model.spec().backbone.conv_count();
  for (const auto& src : model.pooled_sources()) {
    if (src.conv_index == last && !src.gated) return cam_from_source(model, record, src, cls);
  }
  throw ConfigError("CAM needs a pooled head over the last layer; this " +
                    std::string(aggregator_name(model.spec().aggregator)) + " model has none");
}

std::vector<ClassActivationMap> cams_all_classes(const Model& model, const EcgRecord& record) {
  std::vector<ClassActivationMap> out;
  for (std::size_t c = 0; c < model.spec().head.classes; ++c) out.push_back(cam_for_prediction(model, record, c));
  return out;
}

ClassActivationMap intermediate_cam(const Model& model, const EcgRecord& record, std::size_t tap,
                                    std::optional<std::size_t> cls) {
  for (const auto& src : model.pooled_sources()) {
    if (src.conv_index != tap) continue;
    if (src.gated) {
      throw ConfigError("conv" + std::to_string(tap) + " feeds the attention gate; use the gated attention map");
    }
    return cam_from_source(model, record, src, cls);
  }
  throw ConfigError("model has no pooled tap at conv" + std::to_string(tap));
}

GatedAttentionMap gated_attention_map(const Model& model, const EcgRecord& record) {
  if (model.spec().aggregator != Aggregator::attention) {
    throw ConfigError("gated attention maps need an attention model, not a " +
                      std::string(aggregator_name(model.spec().aggregator)) + " model");
  }
  Forward f = run_single(model, record);
  const std::size_t tap = model.spec().attention.tap;
  GatedAttentionMap m;
  m.record_id = record.id;
  m.tap = tap;
  auto a = f.out.alpha.values();
  m.alpha.assign(a.begin(), a.end());
  const Tensor& x = f.out.backbone.taps.at(tap);
  const std::size_t valid = model.spec().head.masked ? f.out.backbone.tap_valid.at(tap)[0] : x.time();
  m.valid_steps = valid;
  m.valid_samples = f.length;
  m.gated.assign(x.channels(), 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < valid; ++i) {
    for (std::size_t c = 0; c < x.channels(); ++c) m.gated[c] += m.alpha[i] * xv[i * x.channels() + c];
  }
  const FeatureGeometry g = feature_geometry(model.spec().backbone, tap);
  m.upsampled = upsample_centered(m.alpha, g, model.spec().input_length);
  return m;
}

}  // namespace ecgx
