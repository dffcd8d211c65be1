#include "ecgx/introspection.hpp"

#include <algorithm>
#include <cmath>

#include "ecgx/errors.hpp"
#include "ecgx/heads.hpp"
#include "ecgx/ops.hpp"

namespace ecgx {

namespace {

ModelOutput run_single(const Model& model, const EcgRecord& record, bool capture) {
  NoGradGuard no_grad;
  const EcgRecord* ptr = &record;
  PaddedBatch pb = pad_batch(std::span<const EcgRecord* const>(&ptr, 1), model.spec().input_length);
  return model.infer(pb.signals, pb.lengths, capture);
}

void require_recurrent(const Model& model, const char* what) {
  if (model.spec().aggregator != Aggregator::recurrent) {
    throw ConfigError(std::string(what) + " needs a recurrent model, not a " +
                      std::string(aggregator_name(model.spec().aggregator)) + " model");
  }
}

}  // namespace

DecisionTrace decision_over_time(const Model& model, const EcgRecord& record) {
  require_recurrent(model, "decision_over_time");
  const RecurrentSpec& rs = model.spec().recurrent;
  if (rs.bidirectional || rs.readout != Readout::last) {
    throw ConfigError("decision_over_time needs a unidirectional recurrent model with readout = last");
  }
  ModelOutput out = run_single(model, record, false);
  const RecurrentOutput& ro = *out.recurrent;
  const std::size_t T = ro.top_forward.size();
  const std::size_t valid = ro.valid[0];
  DecisionTrace trace;
  trace.record_id = record.id;
  trace.stride = static_cast<double>(model.spec().input_length) / static_cast<double>(T);
  trace.final_prediction = out.predictions()[0];
  NoGradGuard no_grad;
  const Classifier& head = model.classifiers()[0];
  for (std::size_t t = 0; t < valid; ++t) {
    Tensor p = softmax(classify(ro.top_forward[t], head));
    trace.softmax.emplace_back(p.values().begin(), p.values().end());
    const auto& row = trace.softmax.back();
    trace.argmax.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    const std::size_t lo = std::min<std::size_t>(record.true_length(), static_cast<std::size_t>(std::llround(t * trace.stride)));
    std::size_t hi = std::min<std::size_t>(record.true_length(), static_cast<std::size_t>(std::llround((t + 1) * trace.stride)));
    if (t + 1 == valid) hi = record.true_length();
    trace.sample_ranges.emplace_back(lo, std::max(lo, hi));
  }
  return trace;
}

GateTrace gate_trace(const Model& model, const EcgRecord& record, std::size_t layer, bool reverse) {
  require_recurrent(model, "gate_trace");
  const RecurrentSpec& rs = model.spec().recurrent;
  if (layer >= rs.layers) throw ConfigError("gate_trace: model has no recurrent layer " + std::to_string(layer));
  if (reverse && !rs.bidirectional) throw ConfigError("gate_trace: model is not bidirectional");
  ModelOutput out = run_single(model, record, true);
  for (auto& t : out.recurrent->traces) {
    if (t.layer == layer && t.reverse == reverse) return t;
  }
  throw ConfigError("gate_trace: capture produced no trace for the requested layer");
}

}  // namespace ecgx
