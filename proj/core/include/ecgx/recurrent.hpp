#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/optim.hpp"
#include "ecgx/tensor.hpp"

namespace ecgx {

enum class CellKind { rnn, lstm, gru };
enum class Readout { last, center, last_pool };

CellKind parse_cell_kind(std::string_view text);
std::string_view cell_kind_name(CellKind kind);
Readout parse_readout(std::string_view text);  // last | center | last+pool
std::string_view readout_name(Readout readout);

struct RecurrentSpec {
  CellKind cell = CellKind::lstm;
  std::size_t layers = 1;
  std::size_t hidden = 64;
  bool bidirectional = false;
  Readout readout = Readout::last;
  bool pretrained_backbone = false;
  /// Stop each record's recurrence at its valid length (state frozen after).
  bool masked = true;
};

void validate(const RecurrentSpec& spec);

/// Gate-stacked weights. LSTM gates are ordered (i, f, g, o), GRU gates (r, z, n).
/// The vanilla RNN has no biases.
struct CellWeights {
  CellKind kind = CellKind::lstm;
  std::size_t input = 0;
  std::size_t hidden = 0;
  Tensor w_x;  // [1,input,G*hidden]
  Tensor w_h;  // [1,hidden,G*hidden]
  Tensor b_x;  // [1,1,G*hidden]
  Tensor b_h;  // [1,1,G*hidden]

  /// Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) for every entry.
  static CellWeights make(CellKind kind, std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  static std::size_t gates(CellKind kind);
  std::size_t parameter_count() const;
};

struct LstmStep {
  Tensor h, c, i, f, g, o;
};

struct GruStep {
  Tensor h, r, z, n;
};

/// x_t: [B,1,input], h/c: [B,1,hidden].
LstmStep lstm_cell_step(const Tensor& x_t, const Tensor& h, const Tensor& c, const CellWeights& w);
GruStep gru_cell_step(const Tensor& x_t, const Tensor& h, const CellWeights& w);
Tensor rnn_cell_step(const Tensor& x_t, const Tensor& h, const CellWeights& w);

/// Per-step gate and state values of batch row 0 for one layer and direction.
struct GateTrace {
  CellKind cell = CellKind::lstm;
  std::size_t layer = 0;
  bool reverse = false;
  std::size_t units = 0;
  std::vector<std::string> quantities;  // lstm: i f o g h c; gru: r z n h; rnn: h
  std::vector<std::size_t> steps;       // time index of each entry
  std::vector<double> values;           // entries x quantities x units

  std::size_t entries() const { return steps.size(); }
  double value(std::size_t entry, std::size_t quantity, std::size_t unit) const {
    return values[(entry * quantities.size() + quantity) * units + unit];
  }
  std::size_t quantity_index(std::string_view name) const;
};

struct RecurrentOutput {
  Tensor readout;                       // [B,1,R]
  std::vector<Tensor> top_forward;      // top layer forward h per step, [B,1,hidden] each
  std::vector<std::size_t> valid;
  std::vector<GateTrace> traces;
};

class RecurrentStack {
 public:
  RecurrentStack() = default;
  RecurrentStack(RecurrentSpec spec, std::size_t input_size, std::mt19937_64& rng, std::string prefix = "recurrent");

  const RecurrentSpec& spec() const { return spec_; }
  std::size_t input_size() const { return input_; }
  /// Width of the readout vector (before any pooled-vector concatenation).
  std::size_t readout_size() const;

  /// features: [B,T,C]; `valid` empty means full length.
  RecurrentOutput run(const Tensor& features, std::span<const std::size_t> valid, bool capture = false) const;

  CellWeights& weights(std::size_t layer, bool reverse);
  const CellWeights& weights(std::size_t layer, bool reverse) const;
  ParameterList parameters(const std::string& group = "head") const;

 private:
  RecurrentSpec spec_;
  std::size_t input_ = 0;
  std::string prefix_;
  std::vector<CellWeights> cells_;  // layer-major, forward then backward
};

/// Runs a single recurrent layer/direction over pre-sliced steps. Exposed for
/// tests and introspection; `reverse` walks from the last step to the first.
std::vector<Tensor> run_direction(const CellWeights& w, std::span<const Tensor> steps,
                                  std::span<const std::size_t> valid, bool reverse, Tensor* final_h,
                                  GateTrace* trace);

}  // namespace ecgx
