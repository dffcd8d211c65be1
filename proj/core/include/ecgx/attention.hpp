#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "ecgx/optim.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

/// Additive attention between an intermediate map x (Cx channels) and the
/// last-layer context (Cc channels), all as 1-wide convolutions.
struct GateParams {
  Tensor w_x;    // [1,Cx,A]
  Tensor w_c;    // [1,Cc,A]
  Tensor b_c;    // [1,1,A]
  Tensor psi;    // [1,A,1]
  Tensor b_phi;  // [1,1,1]

  static GateParams make(std::size_t tap_channels, std::size_t context_channels, std::size_t dim, std::mt19937_64& rng);
  std::size_t dim() const { return psi.defined() ? psi.time() : 0; }
  void append_parameters(ParameterList& params, const std::string& prefix, const std::string& group) const;
};

/// alpha[b,i] = sigmoid(psi . relu(W_x x_i + W_c c_i + b_c) + b_phi), with the
/// context resampled to the tap length. Returns [B,T_tap,1].
Tensor attention_coefficients(const Tensor& x_tap, const Tensor& context, const GateParams& params);

/// g = sum_i alpha_i x_i over the first valid[b] positions. Returns [B,1,C_tap].
Tensor gate_and_pool(const Tensor& x_tap, const Tensor& alpha, std::span<const std::size_t> valid);

}  // namespace ecgx
