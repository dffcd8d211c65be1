#include "ecgx/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ecgx/errors.hpp"
#include "ecgx/ops.hpp"
#include "ecgx/optim.hpp"

namespace ecgx {

std::size_t coarse_length(std::size_t length, std::size_t factor) {
  if (factor == 0) throw ConfigError("shift grid: downsample factor must be positive");
  return (length + factor - 1) / factor;
}

ShiftGrid ShiftGrid::zeros(std::size_t length, std::size_t factor) {
  if (length == 0) throw ShapeError("shift grid: empty signal");
  ShiftGrid g;
  g.factor = factor;
  g.length = length;
  g.coarse.assign(coarse_length(length, factor), 0.0);
  return g;
}

void ShiftGrid::clamp() {
  for (auto& v : coarse) v = std::clamp(v, -1.0, 1.0);
}

std::vector<double> ShiftGrid::fine() const {
  NoGradGuard no_grad;
  Tensor c(Shape{1, coarse.size(), 1}, coarse);
  Tensor f = resample_time(c, length);
  return {f.values().begin(), f.values().end()};
}

Tensor warp(const Tensor& signal, const Tensor& coarse) {
  if (signal.channels() != 1 || coarse.channels() != 1) throw ShapeError("warp: single-channel signal and grid expected");
  if (signal.batch() != coarse.batch()) throw ShapeError("warp: signal and grid batch sizes differ");
  return shift_sample(signal, resample_time(coarse, signal.time()));
}

std::vector<double> warp(std::span<const double> signal, const ShiftGrid& grid) {
  if (signal.size() != grid.length) throw ShapeError("warp: grid was built for a different signal length");
  NoGradGuard no_grad;
  Tensor s(Shape{1, signal.size(), 1}, std::vector<double>(signal.begin(), signal.end()));
  Tensor c(Shape{1, grid.coarse.size(), 1}, grid.coarse);
  Tensor w = warp(s, c);
  return {w.values().begin(), w.values().end()};
}

ObjectiveTerms objective(const Tensor& coarse, const Tensor& signal, const Model& model, std::size_t target,
                         const ObjectiveWeights& weights) {
  if (target >= model.spec().head.classes) throw ConfigError("objective: target class out of range");
  const std::size_t length = signal.time();
  if (length > model.spec().input_length) throw ShapeError("objective: signal longer than the model input");
  ObjectiveTerms t;
  Tensor warped = pad_time(warp(signal, coarse), model.spec().input_length);
  const std::size_t lengths[] = {length};
  ModelOutput out = model.infer(warped, lengths);
  Tensor score = slice_channels(out.probabilities, target, 1);
  Tensor total = score;
  t.score = score.item();
  if (weights.l1 != 0.0) {
    Tensor s = scale(sum(abs(coarse)), weights.l1);
    t.sparsity = s.item();
    total = add(total, s);
  }
  if (weights.tv != 0.0 && coarse.time() > 1) {
    Tensor s = scale(sum(pow_abs(diff_time(coarse), weights.beta)), weights.tv);
    t.smoothness = s.item();
    total = add(total, s);
  }
  t.total = total;
  return t;
}

MaskConfig time_matched(MaskConfig config, double sample_rate, std::size_t record_length) {
  if (!(sample_rate > 0.0)) throw ConfigError("time_matched: sample rate must be positive");
  if (record_length < 2) throw ConfigError("time_matched: record needs at least two samples");
  const double cell = static_cast<double>(config.factor) / kReferenceRate;
  config.factor = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cell * sample_rate)));
  // Seconds covered by one normalized unit of shift.
  const double ref_unit = static_cast<double>(kPaddedLength - 1) / 2.0 / kReferenceRate;
  const double unit = static_cast<double>(record_length - 1) / 2.0 / sample_rate;
  config.lr *= ref_unit / unit;
  return config;
}

std::size_t PerturbationResult::max_shift_sample() const {
  const auto f = grid.fine();
  std::size_t best = 0;
  for (std::size_t i = 1; i < f.size(); ++i) {
    if (std::abs(f[i]) > std::abs(f[best])) best = i;
  }
  return best;
}

namespace {

std::vector<double> probabilities_of(const Model& model, const Tensor& signal) {
  NoGradGuard no_grad;
  const std::size_t lengths[] = {signal.time()};
  ModelOutput out = model.infer(pad_time(signal, model.spec().input_length), lengths);
  return {out.probabilities.values().begin(), out.probabilities.values().end()};
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

PerturbationResult optimize_mask(const EcgRecord& record, const Model& model, const MaskConfig& config) {
  if (config.flip_to >= model.spec().head.classes) throw ConfigError("perturb: flip target out of range");
  if (!(config.lr > 0.0)) throw ConfigError("perturb: learning rate must be positive");
  if (record.samples.empty()) throw ShapeError("perturb: empty record");
  const std::size_t L = record.true_length();
  Tensor signal(Shape{1, L, 1}, std::vector<double>(record.samples.begin(), record.samples.end()));

  PerturbationResult r;
  r.before = probabilities_of(model, signal);
  r.original_class = argmax(r.before);
  if (r.original_class == config.flip_to && !config.any_target) {
    throw ConfigError("record '" + record.id + "' is already classified as class " + std::to_string(config.flip_to) +
                      "; there is no decision to flip");
  }

  r.grid = ShiftGrid::zeros(L, config.factor);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, config.init_std);
  for (auto& v : r.grid.coarse) v = init(rng);
  r.grid.clamp();

  Tensor coarse(Shape{1, r.grid.coarse.size(), 1}, r.grid.coarse);
  coarse.set_requires_grad(true);
  ParameterList params{{"shift", coarse, "default"}};
  AdamConfig ac;
  ac.lr = config.lr;
  Adam adam(ac);
  const Tensor wrt[] = {coarse};

  auto clamp_tensor = [&] {
    for (auto& v : coarse.mutable_values()) v = std::clamp(v, -1.0, 1.0);
  };
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    ObjectiveTerms t = objective(coarse, signal, model, r.original_class, config.weights);
    r.objective_trace.push_back(t.total.item());
    coarse.zero_grad();
    backward_wrt(t.total, wrt);
    adam.step(params);
    clamp_tensor();
  }
  {
    NoGradGuard no_grad;
    r.objective_trace.push_back(objective(coarse, signal, model, r.original_class, config.weights).total.item());
  }
  for (double v : r.objective_trace) {
    if (!std::isfinite(v)) throw NumericalError("perturb: objective became non-finite");
  }
  r.grid.coarse.assign(coarse.values().begin(), coarse.values().end());
  {
    NoGradGuard no_grad;
    Tensor w = warp(signal, coarse);
    r.warped.assign(w.values().begin(), w.values().end());
    r.after = probabilities_of(model, w);
  }
  r.final_class = argmax(r.after);
  r.flipped = r.original_class == config.flip_to ? r.final_class != r.original_class : r.final_class == config.flip_to;
  return r;
}

std::vector<double> occlude(std::span<const double> signal, std::span<const double> mask, double k) {
  if (signal.size() != mask.size()) throw ShapeError("occlude: mask length differs from signal length");
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (mask[i] < 0.0 || mask[i] > 1.0) throw ConfigError("occlude: mask values must lie in [0,1]");
    out[i] = mask[i] * signal[i] + k * (1.0 - mask[i]);
  }
  return out;
}

}  // namespace ecgx
