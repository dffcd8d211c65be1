#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecgx/data.hpp"
#include "ecgx/model.hpp"
#include "ecgx/recurrent.hpp"

namespace ecgx {

struct DecisionTrace {
  std::string record_id;
  std::vector<std::vector<double>> softmax;  // per valid recurrent step
  std::vector<int> argmax;
  double stride = 1.0;  // input samples per step
  /// Half-open input sample range covered by each step.
  std::vector<std::pair<std::size_t, std::size_t>> sample_ranges;
  int final_prediction = 0;
};

/// Feeds every intermediate forward hidden state of the top recurrent layer
/// through the trained classifier. Requires a unidirectional model with the
/// plain `last` readout so the final entry is the model's own prediction.
DecisionTrace decision_over_time(const Model& model, const EcgRecord& record);

/// Per-step gate and state values of one recurrent layer for a single record.
GateTrace gate_trace(const Model& model, const EcgRecord& record, std::size_t layer = 0, bool reverse = false);

}  // namespace ecgx
