#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ecgx/cam.hpp"
#include "ecgx/data.hpp"
#include "ecgx/introspection.hpp"
#include "ecgx/recurrent.hpp"
#include "ecgx/saliency.hpp"
#include "ecgx/train.hpp"

namespace ecgx {

/// Jet-style colour for t in [0,1]: dark blue (low) to dark red (high).
std::string heat_color(double t);

// CSV writers. All emit a header row.
void write_cam_csv(std::ostream& out, const EcgRecord& record, const ClassActivationMap& cam);
void write_attention_csv(std::ostream& out, const EcgRecord& record, const GatedAttentionMap& map);
void write_decision_csv(std::ostream& out, const DecisionTrace& trace, std::span<const std::string> class_names);
void write_shift_grid_csv(std::ostream& out, const PerturbationResult& result);
void write_shift_scores_csv(std::ostream& out, const PerturbationResult& result, std::span<const std::string> class_names);
void write_gate_trace_csv(std::ostream& out, const GateTrace& trace);
void write_loss_csv(std::ostream& out, std::span<const EpochStats> history);

// SVG renderers.
std::string cam_svg(const EcgRecord& record, const ClassActivationMap& cam, const std::string& title);
std::string attention_svg(const EcgRecord& record, const GatedAttentionMap& map, const std::string& title);
/// Four score rows plus a colour-coded decision row.
std::string decision_svg(const EcgRecord& record, const DecisionTrace& trace, std::span<const std::string> class_names);
/// Event strip, original vs warped overlay, shift trace.
std::string perturbation_svg(const EcgRecord& record, const PerturbationResult& result,
                             std::span<const std::string> class_names);
std::string gate_trace_svg(const GateTrace& trace);

}  // namespace ecgx
