#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ecgx/tensor.hpp"

namespace ecgx {

struct Parameter {
  std::string name;  // e.g. "backbone.conv3.weight"
  Tensor tensor;
  std::string group = "default";
};

using ParameterList = std::vector<Parameter>;

/// Non-trainable state that still belongs in a checkpoint (BatchNorm running stats).
struct Buffer {
  std::string name;
  std::vector<double>* values;
};

std::size_t count_parameters(const ParameterList& params);
void zero_grads(ParameterList& params);
/// Throws ConfigError on duplicate names.
void require_unique_names(const ParameterList& params);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam with bias correction and named learning-rate groups. The "default"
/// group always exists and starts at AdamConfig::lr.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  void set_group_lr(const std::string& group, double lr);
  double group_lr(const std::string& group) const;
  const std::map<std::string, double>& group_lrs() const { return group_lr_; }

  /// One update from the gradients currently stored on the parameters.
  /// Parameters without a gradient buffer are treated as having zero gradient.
  void step(ParameterList& params);

  /// Multiplies every group's learning rate (per-epoch decay).
  void decay(double factor);

  std::size_t steps() const { return step_; }
  void set_steps(std::size_t steps) { step_ = steps; }
  std::map<std::string, AdamSlot>& slots() { return slots_; }
  const std::map<std::string, AdamSlot>& slots() const { return slots_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::map<std::string, double> group_lr_;
  std::map<std::string, AdamSlot> slots_;
  std::size_t step_ = 0;
};

}  // namespace ecgx
