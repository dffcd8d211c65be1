#include <benchmark/benchmark.h>

#include <random>

#include "ecgx/cam.hpp"
#include "ecgx/data.hpp"
#include "ecgx/model.hpp"
#include "ecgx/ops.hpp"
#include "ecgx/recurrent.hpp"
#include "ecgx/saliency.hpp"
#include "ecgx/train.hpp"

using namespace ecgx;

namespace {

Tensor randn(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(shape.size());
  for (auto& x : v) x = g(rng);
  return Tensor(shape, std::move(v));
}

ModelSpec desk(Aggregator agg) {
  ModelSpec s;
  s.backbone = backbone_preset("desk7");
  s.input_length = kDeskLength;
  s.aggregator = agg;
  s.recurrent.hidden = 16;
  s.attention.tap = 5;
  if (agg == Aggregator::attention) s.head.fusion = Fusion::concat;
  return s;
}

}  // namespace

static void BM_Conv1dForward(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const Tensor x = randn(Shape{1, L, 32}, 0), w = randn(Shape{21, 32, 32}, 1), b = randn(Shape{1, 1, 32}, 2);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, w, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_Conv1dForward)->Arg(1000)->Arg(4575);

static void BM_Conv1dBackward(benchmark::State& state) {
  Tensor x = randn(Shape{1, 1000, 32}, 0), w = randn(Shape{21, 32, 32}, 1), b = randn(Shape{1, 1, 32}, 2);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    sum(conv1d(x, w, b)).backward();
  }
}
BENCHMARK(BM_Conv1dBackward);

static void BM_LstmStack(benchmark::State& state) {
  RecurrentSpec spec;
  spec.hidden = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(0);
  RecurrentStack stack(spec, 64, rng);
  const Tensor f = randn(Shape{16, 44, 64}, 3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(stack.run(f, {}));
}
BENCHMARK(BM_LstmStack)->Arg(16)->Arg(64);

static void BM_DeskInference(benchmark::State& state) {
  const Model m(desk(static_cast<Aggregator>(state.range(0))), 0);
  const Tensor x = randn(Shape{16, kDeskLength, 1}, 4);
  const std::vector<std::size_t> lengths(16, kDeskLength);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x, lengths));
  state.SetLabel(std::string(aggregator_name(m.spec().aggregator)));
}
BENCHMARK(BM_DeskInference)->DenseRange(0, 2);

static void BM_DeskTrainEpoch(benchmark::State& state) {
  SyntheticConfig sc;
  sc.counts = {16, 16, 16, 16};
  std::vector<EcgRecord> records;
  for (auto& s : generate_synthetic(sc)) records.push_back(std::move(s.record));
  Model m(desk(Aggregator::pooling), 0);
  Trainer trainer(m, TrainConfig{});
  for (auto _ : state) trainer.run_epoch(records);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_DeskTrainEpoch)->Unit(benchmark::kMillisecond);

static void BM_Cnn7Inference(benchmark::State& state) {
  const Model m(ModelSpec{}, 0);
  const Tensor x = randn(Shape{1, kPaddedLength, 1}, 5);
  const std::vector<std::size_t> lengths{kPaddedLength};
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x, lengths));
}
BENCHMARK(BM_Cnn7Inference)->Unit(benchmark::kMillisecond);

static void BM_Warp(benchmark::State& state) {
  const Tensor s = randn(Shape{1, kPaddedLength, 1}, 6);
  Tensor grid = randn(Shape{1, coarse_length(kPaddedLength), 1}, 7);
  for (auto& v : grid.mutable_values()) v *= 0.01;
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(warp(s, grid));
}
BENCHMARK(BM_Warp);

static void BM_CamForPrediction(benchmark::State& state) {
  const Model m(desk(Aggregator::pooling), 0);
  SyntheticConfig sc;
  sc.counts = {0, 0, 1, 0};
  const EcgRecord r = generate_synthetic(sc)[0].record;
  for (auto _ : state) benchmark::DoNotOptimize(cam_for_prediction(m, r));
}
BENCHMARK(BM_CamForPrediction);
BENCHMARK_MAIN();
