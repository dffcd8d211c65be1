#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ecgx/checkpoint.hpp"
#include "ecgx/data.hpp"
#include "ecgx/metrics.hpp"
#include "ecgx/model.hpp"
#include "ecgx/optim.hpp"

namespace ecgx {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 1e-3;
  double decay = 0.95;  // per-epoch multiplier
  std::uint64_t seed = 0;
  /// Initial learning rate per optimizer group ("backbone", "head"); groups
  /// not listed start at `lr`.
  std::map<std::string, double> group_lr;
  bool shuffle = true;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based, counted across resumes
  double loss = 0.0;
  std::map<std::string, double> lr;  // rates used during this epoch
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam over labelled records. Each epoch draws its shuffle and
/// dropout masks from a generator seeded by (seed, epoch), so a resumed run
/// replays exactly what an uninterrupted one would have done.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  std::vector<EpochStats> run(std::span<const EcgRecord> records, const EpochCallback& callback = {});
  /// Trains a single epoch.
  EpochStats run_epoch(std::span<const EcgRecord> records);

  std::size_t epoch() const { return epoch_; }
  Adam& optimizer() { return adam_; }

  /// Model state plus optimizer moments and the epoch counter.
  std::vector<CheckpointEntry> checkpoint() const;
  void restore(std::span<const CheckpointEntry> entries);

 private:
  Model& model_;
  TrainConfig config_;
  Adam adam_;
  std::size_t epoch_ = 0;
};

/// Convenience wrapper: a fresh Trainer run for config.epochs.
std::vector<EpochStats> train_model(Model& model, std::span<const EcgRecord> records, const TrainConfig& config,
                                    const EpochCallback& callback = {});

/// Eval-mode class probabilities, one row per record.
std::vector<std::vector<double>> predict_proba(const Model& model, std::span<const EcgRecord> records,
                                               std::size_t batch = 16);
std::vector<int> predict(const Model& model, std::span<const EcgRecord> records, std::size_t batch = 16);
ConfusionMatrix evaluate(const Model& model, std::span<const EcgRecord> records, std::size_t batch = 16);

struct PretrainSchedule {
  std::size_t pretrain_epochs = 50;
  std::size_t joint_epochs = 50;
  double pretrain_lr = 1e-3;
  double backbone_lr = 1e-4;
  double head_lr = 1e-3;
  PoolKind pretrain_pooling = PoolKind::max;
};

struct PretrainHistory {
  std::vector<EpochStats> pretrain;
  std::vector<EpochStats> joint;
};

/// Phase 1 trains the backbone with a pooling head; its weights then seed the
/// ConvLSTM's backbone. Phase 2 trains the whole ConvLSTM with a reduced
/// backbone learning rate. `base` supplies batch size, decay and seed.
PretrainHistory pretrain_then_joint(Model& convlstm, std::span<const EcgRecord> records,
                                    const PretrainSchedule& schedule, const TrainConfig& base,
                                    const EpochCallback& callback = {});

using ModelFactory = std::function<Model(std::size_t fold)>;
using TrainFunction = std::function<void(Model&, std::span<const EcgRecord> train, std::size_t fold)>;

struct CrossValidationResult {
  F1Report report;
  std::vector<ConfusionMatrix> folds;
  std::vector<std::size_t> completed;  // fold indices that finished
  std::vector<std::string> failures;   // diagnostics of aborted folds
};

/// Trains on k-1 folds and evaluates on the held-out one, for every fold.
/// A fold whose training diverges is aborted and reported in `failures`.
CrossValidationResult cross_validate(const ModelFactory& factory, std::span<const EcgRecord> records,
                                     std::span<const std::size_t> folds, std::size_t k, const TrainFunction& train,
                                     std::size_t workers = 1);

/// TrainFunction running train_model with `config` (seed offset by the fold).
TrainFunction plain_training(const TrainConfig& config);

}  // namespace ecgx
