#include "ecgx/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "ecgx/errors.hpp"

namespace ecgx {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

int label_of(const EcgRecord& r) {
  if (!r.label) throw ConfigError("record '" + r.id + "' has no label; training needs labelled records");
  return static_cast<int>(*r.label);
}

}  // namespace

Trainer::Trainer(Model& model, TrainConfig config) : model_(model), config_(std::move(config)) {
  if (config_.batch == 0) throw ConfigError("train: batch size must be at least 1");
  if (!(config_.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(config_.decay > 0.0)) throw ConfigError("train: decay must be positive");
  AdamConfig ac;
  ac.lr = config_.lr;
  adam_ = Adam(ac);
  for (const auto& p : model_.parameters()) {
    if (!adam_.group_lrs().count(p.group)) adam_.set_group_lr(p.group, config_.lr);
  }
  for (const auto& [group, lr] : config_.group_lr) {
    if (!(lr > 0.0)) throw ConfigError("train: learning rate of group '" + group + "' must be positive");
    adam_.set_group_lr(group, lr);
  }
  require_unique_names(model_.parameters());
}

EpochStats Trainer::run_epoch(std::span<const EcgRecord> records) {
  if (records.empty()) throw ConfigError("train: no training records");
  const auto start = std::chrono::steady_clock::now();
  ++epoch_;
  std::mt19937_64 rng(mix(config_.seed, epoch_));
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  if (config_.shuffle) std::shuffle(order.begin(), order.end(), rng);

  EpochStats stats;
  stats.epoch = epoch_;
  stats.lr = adam_.group_lrs();
  ParameterList params = model_.parameters();
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch) {
    const std::size_t end = std::min(order.size(), begin + config_.batch);
    std::vector<const EcgRecord*> ptrs;
    std::vector<int> targets;
    for (std::size_t i = begin; i < end; ++i) {
      ptrs.push_back(&records[order[i]]);
      targets.push_back(label_of(records[order[i]]));
    }
    PaddedBatch batch = pad_batch(ptrs, model_.spec().input_length);
    ModelOutput out = model_.forward(batch.signals, batch.lengths, Mode::train, rng);
    Tensor loss = model_.loss(out, targets);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError("training loss is not finite at epoch " + std::to_string(epoch_));
    zero_grads(params);
    loss.backward();
    adam_.step(params);
    total += value;
    ++batches;
  }
  adam_.decay(config_.decay);
  stats.loss = total / static_cast<double>(batches);
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

std::vector<EpochStats> Trainer::run(std::span<const EcgRecord> records, const EpochCallback& callback) {
  std::vector<EpochStats> history;
  while (epoch_ < config_.epochs) {
    history.push_back(run_epoch(records));
    if (callback) callback(history.back());
  }
  return history;
}

std::vector<CheckpointEntry> Trainer::checkpoint() const {
  std::vector<CheckpointEntry> entries = model_.state();
  for (const auto& p : model_.parameters()) {
    auto it = adam_.slots().find(p.name);
    if (it == adam_.slots().end()) continue;
    entries.push_back(make_entry("opt.m." + p.name, it->second.m, p.tensor.shape()));
    entries.push_back(make_entry("opt.v." + p.name, it->second.v, p.tensor.shape()));
  }
  auto scalar = [](std::string name, double v) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.dims = {1};
    e.values = {static_cast<float>(v)};
    return e;
  };
  entries.push_back(scalar("__meta.epoch", static_cast<double>(epoch_)));
  entries.push_back(scalar("__meta.adam_step", static_cast<double>(adam_.steps())));
  for (const auto& [group, lr] : adam_.group_lrs()) entries.push_back(scalar("__meta.lr." + group, lr));
  return entries;
}

void Trainer::restore(std::span<const CheckpointEntry> entries) {
  model_.load_state(entries);
  auto& slots = adam_.slots();
  slots.clear();
  for (const auto& e : entries) {
    if (e.name.rfind("opt.m.", 0) == 0) {
      slots[e.name.substr(6)].m.assign(e.values.begin(), e.values.end());
    } else if (e.name.rfind("opt.v.", 0) == 0) {
      slots[e.name.substr(6)].v.assign(e.values.begin(), e.values.end());
    } else if (e.name == "__meta.epoch" && !e.values.empty()) {
      epoch_ = static_cast<std::size_t>(std::llround(e.values[0]));
    } else if (e.name == "__meta.adam_step" && !e.values.empty()) {
      adam_.set_steps(static_cast<std::size_t>(std::llround(e.values[0])));
    } else if (e.name.rfind("__meta.lr.", 0) == 0 && !e.values.empty()) {
      adam_.set_group_lr(e.name.substr(10), e.values[0]);
    }
  }
}

std::vector<EpochStats> train_model(Model& model, std::span<const EcgRecord> records, const TrainConfig& config,
                                    const EpochCallback& callback) {
  Trainer trainer(model, config);
  return trainer.run(records, callback);
}

std::vector<std::vector<double>> predict_proba(const Model& model, std::span<const EcgRecord> records,
                                               std::size_t batch) {
  if (batch == 0) batch = 1;
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(records.size());
  for (std::size_t begin = 0; begin < records.size(); begin += batch) {
    const std::size_t end = std::min(records.size(), begin + batch);
    PaddedBatch pb = pad_batch(records.subspan(begin, end - begin), model.spec().input_length);
    ModelOutput o = model.infer(pb.signals, pb.lengths);
    const std::size_t C = o.probabilities.channels();
    auto p = o.probabilities.values();
    for (std::size_t b = 0; b < end - begin; ++b) out.emplace_back(p.begin() + b * C, p.begin() + (b + 1) * C);
  }
  return out;
}

std::vector<int> predict(const Model& model, std::span<const EcgRecord> records, std::size_t batch) {
  std::vector<int> out;
  for (const auto& row : predict_proba(model, records, batch)) {
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

ConfusionMatrix evaluate(const Model& model, std::span<const EcgRecord> records, std::size_t batch) {
  ConfusionMatrix cm(model.spec().head.classes);
  const auto pred = predict(model, records, batch);
  for (std::size_t i = 0; i < records.size(); ++i) cm.add(label_of(records[i]), pred[i]);
  return cm;
}

PretrainHistory pretrain_then_joint(Model& convlstm, std::span<const EcgRecord> records,
                                    const PretrainSchedule& schedule, const TrainConfig& base,
                                    const EpochCallback& callback) {
  if (convlstm.spec().aggregator != Aggregator::recurrent) {
    throw ConfigError("pretrain_then_joint expects a recurrent model");
  }
  PretrainHistory history;
  ModelSpec pre_spec;
  pre_spec.backbone = convlstm.spec().backbone;
  pre_spec.aggregator = Aggregator::pooling;
  pre_spec.head.pooling = schedule.pretrain_pooling;
  pre_spec.head.classes = convlstm.spec().head.classes;
  pre_spec.head.masked = convlstm.spec().head.masked;
  pre_spec.input_length = convlstm.spec().input_length;
  Model pre(pre_spec, mix(base.seed, 0x5052));

  TrainConfig phase1 = base;
  phase1.epochs = schedule.pretrain_epochs;
  phase1.lr = schedule.pretrain_lr;
  phase1.group_lr.clear();
  if (phase1.epochs > 0) history.pretrain = train_model(pre, records, phase1, callback);
  convlstm.copy_backbone_from(pre);

  TrainConfig phase2 = base;
  phase2.epochs = schedule.joint_epochs;
  phase2.lr = schedule.head_lr;
  phase2.group_lr = {{"backbone", schedule.backbone_lr}, {"head", schedule.head_lr}};
  phase2.seed = mix(base.seed, 0x4A4E);
  if (phase2.epochs > 0) history.joint = train_model(convlstm, records, phase2, callback);
  return history;
}

TrainFunction plain_training(const TrainConfig& config) {
  return [config](Model& model, std::span<const EcgRecord> train, std::size_t fold) {
    TrainConfig c = config;
    c.seed = mix(config.seed, fold);
    train_model(model, train, c);
  };
}

CrossValidationResult cross_validate(const ModelFactory& factory, std::span<const EcgRecord> records,
                                     std::span<const std::size_t> folds, std::size_t k, const TrainFunction& train,
                                     std::size_t workers) {
  if (folds.size() != records.size()) throw ConfigError("cross_validate: one fold index per record is required");
  if (k < 2) throw ConfigError("cross_validate: k must be at least 2");
  for (std::size_t f : folds) {
    if (f >= k) throw ConfigError("cross_validate: fold index " + std::to_string(f) + " outside 0.." + std::to_string(k - 1));
  }
  struct FoldResult {
    bool ok = false;
    ConfusionMatrix cm;
    std::string failure;
  };
  std::vector<FoldResult> results(k);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t f = next++; f < k; f = next++) {
      std::vector<EcgRecord> train_set, held_out;
      for (std::size_t i = 0; i < records.size(); ++i) (folds[i] == f ? held_out : train_set).push_back(records[i]);
      if (held_out.empty()) {
        results[f].failure = "fold " + std::to_string(f) + ": no held-out records";
        continue;
      }
      try {
        Model model = factory(f);
        train(model, train_set, f);
        results[f].cm = evaluate(model, held_out);
        results[f].ok = true;
      } catch (const NumericalError& e) {
        results[f].failure = "fold " + std::to_string(f) + " aborted: " + e.what();
        warn(results[f].failure);
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, k);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        try {
          work();
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  CrossValidationResult out;
  for (std::size_t f = 0; f < k; ++f) {
    if (results[f].ok) {
      out.folds.push_back(results[f].cm);
      out.completed.push_back(f);
    } else {
      out.failures.push_back(results[f].failure);
    }
  }
  if (out.folds.empty()) throw NumericalError("cross_validate: every fold failed");
  out.report = make_report(out.folds);
  return out;
}

}  // namespace ecgx
