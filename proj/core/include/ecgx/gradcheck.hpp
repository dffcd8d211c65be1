#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "ecgx/tensor.hpp"

namespace ecgx {

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Denominator floor: error = |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() gradients of a scalar function against central finite
/// differences. `fn` must rebuild its graph from the current values of
/// `inputs` on every call (inputs are perturbed in place and restored).
GradCheckResult grad_check(const std::function<Tensor()>& fn, std::span<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace ecgx
