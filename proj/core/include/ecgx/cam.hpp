#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgx/backbone.hpp"
#include "ecgx/data.hpp"
#include "ecgx/model.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

struct ClassActivationMap {
  std::string record_id;
  std::size_t class_index = 0;
  std::size_t conv_index = 0;
  std::vector<double> raw;        // one value per feature step
  std::vector<double> upsampled;  // one value per input sample (padded length)
  std::size_t valid_steps = 0;
  std::size_t valid_samples = 0;
};

/// raw[n] = sum_k weight[offset + k, cls] * features[row, n, k].
std::vector<double> cam_raw(const Tensor& features, const Tensor& weight, std::size_t cls, std::size_t offset = 0,
                            std::size_t row = 0);

/// Linear interpolation with aligned end points.
std::vector<double> upsample_linear(std::span<const double> raw, std::size_t length);
/// Linear interpolation between receptive-field centres; held constant beyond
/// the first and last centre.
std::vector<double> upsample_centered(std::span<const double> raw, const FeatureGeometry& geometry, std::size_t length);

/// CAM of one feature map (batch row 0). Without a geometry the map is
/// stretched end to end over `input_length`.
ClassActivationMap compute_cam(const Tensor& features, const Tensor& weight, std::size_t cls, std::size_t input_length,
                               std::size_t offset = 0, const FeatureGeometry* geometry = nullptr);

/// CAM of the last layer for the predicted class (or `cls`).
ClassActivationMap cam_for_prediction(const Model& model, const EcgRecord& record,
                                      std::optional<std::size_t> cls = std::nullopt);
std::vector<ClassActivationMap> cams_all_classes(const Model& model, const EcgRecord& record);
/// CAM of an intermediate tap against its own classifier (mean vote) or its
/// slice of the shared classifier (concat).
ClassActivationMap intermediate_cam(const Model& model, const EcgRecord& record, std::size_t tap,
                                    std::optional<std::size_t> cls = std::nullopt);

struct GatedAttentionMap {
  std::string record_id;
  std::size_t tap = 0;
  std::vector<double> alpha;      // per tap step, in [0,1]
  std::vector<double> gated;      // g = sum_i alpha_i x_i
  std::vector<double> upsampled;  // alpha at input resolution
  std::size_t valid_steps = 0;
  std::size_t valid_samples = 0;
};

GatedAttentionMap gated_attention_map(const Model& model, const EcgRecord& record);

}  // namespace ecgx
