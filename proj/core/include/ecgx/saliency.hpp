#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ecgx/data.hpp"
#include "ecgx/model.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

inline constexpr std::size_t kShiftDownsample = 100;

/// ceil(length / factor)
std::size_t coarse_length(std::size_t length, std::size_t factor = kShiftDownsample);

/// Coarse temporal displacement field in normalised coordinates: a shift of
/// s moves the sampling position by s * (L-1)/2 samples.
struct ShiftGrid {
  std::vector<double> coarse;
  std::size_t factor = kShiftDownsample;
  std::size_t length = 0;

  static ShiftGrid zeros(std::size_t length, std::size_t factor = kShiftDownsample);
  void clamp();
  /// Shift per input sample (linear interpolation of the coarse grid).
  std::vector<double> fine() const;
};

/// Differentiable warp. signal: [B,L,1], coarse: [B,G,1].
Tensor warp(const Tensor& signal, const Tensor& coarse);
std::vector<double> warp(std::span<const double> signal, const ShiftGrid& grid);

struct ObjectiveWeights {
  double l1 = 0.2;    // sparsity of the shifts
  double tv = 0.1;    // smoothness between neighbouring coarse entries
  double beta = 1.0;  // smoothness exponent
};

struct ObjectiveTerms {
  Tensor total;
  double sparsity = 0.0;
  double smoothness = 0.0;
  double score = 0.0;
};

/// l1 * sum|m| + tv * sum|m[j+1]-m[j]|^beta + softmax(model(warp(x, m)))[target].
/// signal: [1,L,1] with L the record's true length; padding to the model's
/// input length happens after the warp.
ObjectiveTerms objective(const Tensor& coarse, const Tensor& signal, const Model& model, std::size_t target,
                         const ObjectiveWeights& weights = {});

struct MaskConfig {
  ObjectiveWeights weights;
  double lr = 1e-4;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  double init_std = 1e-3;
  std::size_t factor = kShiftDownsample;
  std::size_t flip_to = static_cast<std::size_t>(Rhythm::normal);
  /// Allow starting from a record already predicted as `flip_to`; success then
  /// means leaving the original class.
  bool any_target = false;
};

struct PerturbationResult {
  ShiftGrid grid;
  std::vector<double> warped;
  std::vector<double> objective_trace;  // initial grid, then after every epoch
  std::vector<double> before, after;    // softmax vectors
  std::size_t original_class = 0;
  std::size_t final_class = 0;
  bool flipped = false;

  /// Sample index with the largest |shift|.
  std::size_t max_shift_sample() const;
};

/// Adam over the coarse grid with clamping to [-1,1] after every step. Only
/// the grid receives gradients; the model is left untouched.
PerturbationResult optimize_mask(const EcgRecord& record, const Model& model, const MaskConfig& config = {});

/// Reference acquisition the default grid factor and step size were tuned for:
/// 300 Hz records zero-padded to 18300 samples.
inline constexpr double kReferenceRate = 300.0;

/// Rescales factor and lr so that one coarse cell and one Adam step span the
/// same duration in seconds as under the reference acquisition, for a record
/// of `record_length` samples at `sample_rate`.
MaskConfig time_matched(MaskConfig config, double sample_rate, std::size_t record_length);

/// M * x + k * (1 - M)
std::vector<double> occlude(std::span<const double> signal, std::span<const double> mask, double k);

}  // namespace ecgx
