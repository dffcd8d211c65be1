#include "ecgx/attention.hpp"

#include <cmath>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"

namespace ecgx {

GateParams GateParams::make(std::size_t tap_channels, std::size_t context_channels, std::size_t dim,
                            std::mt19937_64& rng) {
  if (dim == 0) throw ConfigError("attention: dimension must be at least 1");
  auto draw = [&](Shape s, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(s.size());
    for (auto& x : v) x = dist(rng);
    Tensor t(s, std::move(v));
    t.set_requires_grad(true);
    return t;
  };
  GateParams p;
  p.w_x = draw(Shape{1, tap_channels, dim}, tap_channels);
  p.w_c = draw(Shape{1, context_channels, dim}, context_channels);
  p.b_c = Tensor(Shape{1, 1, dim}, 0.0).set_requires_grad(true);
  p.psi = draw(Shape{1, dim, 1}, dim);
  p.b_phi = Tensor(Shape{1, 1, 1}, 0.0).set_requires_grad(true);
  return p;
}

void GateParams::append_parameters(ParameterList& params, const std::string& prefix, const std::string& group) const {
  params.push_back({prefix + ".w_x", w_x, group});
  params.push_back({prefix + ".w_c", w_c, group});
  params.push_back({prefix + ".b_c", b_c, group});
  params.push_back({prefix + ".psi", psi, group});
  params.push_back({prefix + ".b_phi", b_phi, group});
}

Tensor attention_coefficients(const Tensor& x_tap, const Tensor& context, const GateParams& params) {
  if (x_tap.batch() != context.batch()) throw ShapeError("attention: tap and context batch sizes differ");
  if (x_tap.channels() != params.w_x.time()) {
    throw ShapeError("attention: tap has " + std::to_string(x_tap.channels()) + " channels, gate expects " +
                     std::to_string(params.w_x.time()));
  }
  if (context.channels() != params.w_c.time()) {
    throw ShapeError("attention: context has " + std::to_string(context.channels()) + " channels, gate expects " +
                     std::to_string(params.w_c.time()));
  }
  Tensor c = resample_time(context, x_tap.time());
  Tensor q = relu(add(linear(x_tap, params.w_x, Tensor()), linear(c, params.w_c, params.b_c)));
  return sigmoid(linear(q, params.psi, params.b_phi));
}

Tensor gate_and_pool(const Tensor& x_tap, const Tensor& alpha, std::span<const std::size_t> valid) {
  return global_pool(scale_time(x_tap, alpha), valid, PoolKind::sum);
}

}  // namespace ecgx
