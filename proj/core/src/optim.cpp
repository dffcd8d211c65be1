#include "ecgx/optim.hpp"

#include <cmath>
#include <unordered_set>

#include "ecgx/errors.hpp"

namespace ecgx {

std::size_t count_parameters(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

void zero_grads(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void require_unique_names(const ParameterList& params) {
  std::unordered_set<std::string> seen;
  for (const auto& p : params) {
    if (!seen.insert(p.name).second) throw ConfigError("duplicate parameter name '" + p.name + "'");
  }
}

Adam::Adam(AdamConfig config) : config_(config) { group_lr_["default"] = config.lr; }

void Adam::set_group_lr(const std::string& group, double lr) { group_lr_[group] = lr; }

double Adam::group_lr(const std::string& group) const {
  auto it = group_lr_.find(group);
  if (it == group_lr_.end()) throw ConfigError("no optimizer group named '" + group + "'");
  return it->second;
}

void Adam::step(ParameterList& params) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& p : params) {
    const double lr = group_lr(p.group);
    AdamSlot& slot = slots_[p.name];
    auto values = p.tensor.mutable_values();
    if (slot.m.size() != values.size()) {
      slot.m.assign(values.size(), 0.0);
      slot.v.assign(values.size(), 0.0);
    }
    if (!p.tensor.has_grad()) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        slot.m[i] *= config_.beta1;
        slot.v[i] *= config_.beta2;
        values[i] -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + config_.eps);
      }
      continue;
    }
    auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g;
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g * g;
      values[i] -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + config_.eps);
    }
  }
}

void Adam::decay(double factor) {
  for (auto& [name, lr] : group_lr_) lr *= factor;
}

}  // namespace ecgx
