#include "ecgx/recurrent.hpp"

#include <algorithm>
#include <cmath>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"

namespace ecgx {

CellKind parse_cell_kind(std::string_view text) {
  if (text == "rnn") return CellKind::rnn;
  if (text == "lstm") return CellKind::lstm;
  if (text == "gru") return CellKind::gru;
  throw ConfigError("unknown cell '" + std::string(text) + "' (expected rnn, lstm or gru)");
}

std::string_view cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
  }
  return "?";
}

Readout parse_readout(std::string_view text) {
  if (text == "last") return Readout::last;
  if (text == "center") return Readout::center;
  if (text == "last+pool" || text == "last_pool") return Readout::last_pool;
  throw ConfigError("unknown readout '" + std::string(text) + "' (expected last, center or last+pool)");
}

std::string_view readout_name(Readout readout) {
  switch (readout) {
    case Readout::last: return "last";
    case Readout::center: return "center";
    case Readout::last_pool: return "last+pool";
  }
  return "?";
}

void validate(const RecurrentSpec& spec) {
  if (spec.hidden == 0) throw ConfigError("recurrent: hidden size must be at least 1");
  if (spec.layers == 0) throw ConfigError("recurrent: at least one layer is required");
  if (spec.readout == Readout::center && !spec.bidirectional) {
    throw ConfigError("recurrent: readout = center requires bidirectional = true");
  }
}

std::size_t CellWeights::gates(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return 1;
    case CellKind::lstm: return 4;
    case CellKind::gru: return 3;
  }
  return 1;
}

CellWeights CellWeights::make(CellKind kind, std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  const std::size_t G = gates(kind) * hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto draw = [&](Shape s) {
    std::vector<double> v(s.size());
    for (auto& x : v) x = dist(rng);
    Tensor t(s, std::move(v));
    t.set_requires_grad(true);
    return t;
  };
  CellWeights w;
  w.kind = kind;
  w.input = input;
  w.hidden = hidden;
  w.w_x = draw(Shape{1, input, G});
  w.w_h = draw(Shape{1, hidden, G});
  if (kind != CellKind::rnn) {
    w.b_x = draw(Shape{1, 1, G});
    w.b_h = draw(Shape{1, 1, G});
  }
  return w;
}

std::size_t CellWeights::parameter_count() const {
  std::size_t n = w_x.size() + w_h.size();
  if (b_x.defined()) n += b_x.size() + b_h.size();
  return n;
}

namespace {

void check_step(const Tensor& x_t, const Tensor& h, const CellWeights& w, const char* cell) {
  if (x_t.time() != 1 || x_t.channels() != w.input) {
    throw ShapeError(std::string(cell) + ": input step " + to_string(x_t.shape()) + " does not match input size " +
                     std::to_string(w.input));
  }
  if (h.time() != 1 || h.channels() != w.hidden || h.batch() != x_t.batch()) {
    throw ShapeError(std::string(cell) + ": hidden state " + to_string(h.shape()) + " does not match hidden size " +
                     std::to_string(w.hidden));
  }
}

}  // namespace

LstmStep lstm_cell_step(const Tensor& x_t, const Tensor& h, const Tensor& c, const CellWeights& w) {
  if (w.kind != CellKind::lstm) throw ConfigError("lstm_cell_step: weights are not LSTM weights");
  check_step(x_t, h, w, "lstm");
  if (c.shape() != h.shape()) throw ShapeError("lstm: cell state shape differs from hidden state");
  const std::size_t H = w.hidden;
  Tensor pre = add(linear(x_t, w.w_x, w.b_x), linear(h, w.w_h, w.b_h));
  LstmStep s;
  s.i = sigmoid(slice_channels(pre, 0, H));
  s.f = sigmoid(slice_channels(pre, H, H));
  s.g = tanh_act(slice_channels(pre, 2 * H, H));
  s.o = sigmoid(slice_channels(pre, 3 * H, H));
  s.c = add(mul(s.f, c), mul(s.i, s.g));
  s.h = mul(s.o, tanh_act(s.c));
  return s;
}

GruStep gru_cell_step(const Tensor& x_t, const Tensor& h, const CellWeights& w) {
  if (w.kind != CellKind::gru) throw ConfigError("gru_cell_step: weights are not GRU weights");
  check_step(x_t, h, w, "gru");
  const std::size_t H = w.hidden;
  Tensor gx = linear(x_t, w.w_x, w.b_x);
  Tensor gh = linear(h, w.w_h, w.b_h);
  GruStep s;
  s.r = sigmoid(add(slice_channels(gx, 0, H), slice_channels(gh, 0, H)));
  s.z = sigmoid(add(slice_channels(gx, H, H), slice_channels(gh, H, H)));
  s.n = tanh_act(add(slice_channels(gx, 2 * H, H), mul(s.r, slice_channels(gh, 2 * H, H))));
  s.h = add(mul(one_minus(s.z), s.n), mul(s.z, h));
  return s;
}

Tensor rnn_cell_step(const Tensor& x_t, const Tensor& h, const CellWeights& w) {
  if (w.kind != CellKind::rnn) throw ConfigError("rnn_cell_step: weights are not RNN weights");
  check_step(x_t, h, w, "rnn");
  return tanh_act(add(linear(h, w.w_h, Tensor()), linear(x_t, w.w_x, Tensor())));
}

std::size_t GateTrace::quantity_index(std::string_view name) const {
  for (std::size_t i = 0; i < quantities.size(); ++i) {
    if (quantities[i] == name) return i;
  }
  throw ConfigError("gate trace has no quantity '" + std::string(name) + "'");
}

namespace {

void record(GateTrace& trace, std::size_t t, std::initializer_list<const Tensor*> qs) {
  trace.steps.push_back(t);
  for (const Tensor* q : qs) {
    auto v = q->values();
    trace.values.insert(trace.values.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(trace.units));
  }
}

}  // namespace

std::vector<Tensor> run_direction(const CellWeights& w, std::span<const Tensor> steps,
                                  std::span<const std::size_t> valid, bool reverse, Tensor* final_h,
                                  GateTrace* trace) {
  const std::size_t T = steps.size();
  if (T == 0) throw ShapeError("recurrent: empty sequence");
  const std::size_t B = steps[0].batch();
  Tensor h(Shape{B, 1, w.hidden}, 0.0);
  Tensor c = w.kind == CellKind::lstm ? Tensor(Shape{B, 1, w.hidden}, 0.0) : Tensor();
  if (trace) {
    trace->cell = w.kind;
    trace->reverse = reverse;
    trace->units = w.hidden;
    switch (w.kind) {
      case CellKind::lstm: trace->quantities = {"i", "f", "o", "g", "h", "c"}; break;
      case CellKind::gru: trace->quantities = {"r", "z", "n", "h"}; break;
      case CellKind::rnn: trace->quantities = {"h"}; break;
    }
  }
  std::vector<Tensor> outputs(T);
  std::vector<char> mask(B, 1);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = reverse ? T - 1 - k : k;
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      mask[b] = valid.empty() || t < valid[b];
      all = all && mask[b];
    }
    bool any = false;
    for (char m : mask) any = any || m;
    if (!any) {
      outputs[t] = h;
      continue;
    }
    Tensor nh, nc;
    switch (w.kind) {
      case CellKind::lstm: {
        LstmStep s = lstm_cell_step(steps[t], h, c, w);
        if (trace && mask[0]) record(*trace, t, {&s.i, &s.f, &s.o, &s.g, &s.h, &s.c});
        nh = s.h;
        nc = s.c;
        break;
      }
      case CellKind::gru: {
        GruStep s = gru_cell_step(steps[t], h, w);
        if (trace && mask[0]) record(*trace, t, {&s.r, &s.z, &s.n, &s.h});
        nh = s.h;
        break;
      }
      case CellKind::rnn:
        nh = rnn_cell_step(steps[t], h, w);
        if (trace && mask[0]) record(*trace, t, {&nh});
        break;
    }
    h = all ? nh : select_batch(mask, nh, h);
    if (c.defined()) c = all ? nc : select_batch(mask, nc, c);
    outputs[t] = h;
  }
  if (final_h) *final_h = h;
  return outputs;
}

RecurrentStack::RecurrentStack(RecurrentSpec spec, std::size_t input_size, std::mt19937_64& rng, std::string prefix)
    : spec_(spec), input_(input_size), prefix_(std::move(prefix)) {
  validate(spec_);
  if (input_size == 0) throw ConfigError("recurrent: input size must be positive");
  const std::size_t dirs = spec_.bidirectional ? 2 : 1;
  std::size_t in = input_size;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    for (std::size_t d = 0; d < dirs; ++d) cells_.push_back(CellWeights::make(spec_.cell, in, spec_.hidden, rng));
    in = spec_.hidden * dirs;
  }
}

std::size_t RecurrentStack::readout_size() const { return spec_.hidden * (spec_.bidirectional ? 2 : 1); }

CellWeights& RecurrentStack::weights(std::size_t layer, bool reverse) {
  const std::size_t dirs = spec_.bidirectional ? 2 : 1;
  if (layer >= spec_.layers || (reverse && dirs == 1)) throw ConfigError("recurrent: no such layer/direction");
  return cells_[layer * dirs + (reverse ? 1 : 0)];
}

const CellWeights& RecurrentStack::weights(std::size_t layer, bool reverse) const {
  return const_cast<RecurrentStack*>(this)->weights(layer, reverse);
}

ParameterList RecurrentStack::parameters(const std::string& group) const {
  ParameterList params;
  const std::size_t dirs = spec_.bidirectional ? 2 : 1;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    for (std::size_t d = 0; d < dirs; ++d) {
      const CellWeights& w = cells_[l * dirs + d];
      const std::string base =
          prefix_ + "." + std::string(cell_kind_name(spec_.cell)) + ".l" + std::to_string(l) + (d ? ".bwd" : ".fwd");
      params.push_back({base + ".w_x", w.w_x, group});
      params.push_back({base + ".w_h", w.w_h, group});
      if (w.b_x.defined()) {
        params.push_back({base + ".b_x", w.b_x, group});
        params.push_back({base + ".b_h", w.b_h, group});
      }
    }
  }
  return params;
}

RecurrentOutput RecurrentStack::run(const Tensor& features, std::span<const std::size_t> valid, bool capture) const {
  const std::size_t B = features.batch(), T = features.time();
  if (features.channels() != input_) {
    throw ShapeError("recurrent: feature channels " + std::to_string(features.channels()) + " != input size " +
                     std::to_string(input_));
  }
  RecurrentOutput out;
  out.valid.assign(B, T);
  if (!valid.empty()) {
    if (valid.size() != B) throw ShapeError("recurrent: valid lengths do not match batch");
    for (std::size_t b = 0; b < B; ++b) {
      if (valid[b] == 0) throw ShapeError("recurrent: record " + std::to_string(b) + " has valid length 0");
      if (spec_.masked) out.valid[b] = std::min(valid[b], T);
    }
  }
  std::vector<Tensor> seq(T);
  for (std::size_t t = 0; t < T; ++t) seq[t] = slice_time(features, t, 1);

  const std::size_t dirs = spec_.bidirectional ? 2 : 1;
  Tensor final_fwd, final_bwd;
  std::vector<Tensor> fwd, bwd;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    GateTrace tf, tb;
    fwd = run_direction(cells_[l * dirs], seq, out.valid, false, &final_fwd, capture ? &tf : nullptr);
    if (capture) {
      tf.layer = l;
      out.traces.push_back(std::move(tf));
    }
    if (dirs == 2) {
      bwd = run_direction(cells_[l * dirs + 1], seq, out.valid, true, &final_bwd, capture ? &tb : nullptr);
      if (capture) {
        tb.layer = l;
        out.traces.push_back(std::move(tb));
      }
      if (l + 1 < spec_.layers) {
        for (std::size_t t = 0; t < T; ++t) {
          const Tensor parts[] = {fwd[t], bwd[t]};
          seq[t] = concat_channels(parts);
        }
      }
    } else {
      seq = fwd;
    }
  }
  out.top_forward = fwd;

  if (spec_.readout == Readout::center) {
    std::vector<std::size_t> mid(B);
    for (std::size_t b = 0; b < B; ++b) mid[b] = out.valid[b] / 2;
    const Tensor parts[] = {gather_steps(fwd, mid), gather_steps(bwd, mid)};
    out.readout = concat_channels(parts);
  } else if (dirs == 2) {
    const Tensor parts[] = {final_fwd, final_bwd};
    out.readout = concat_channels(parts);
  } else {
    out.readout = final_fwd;
  }
  return out;
}

}  // namespace ecgx
