#include <benchmark/benchmark.h>

#include <random>

#include "pvclient/data.hpp"
#include "pvclient/evaluation.hpp"
#include "pvclient/model.hpp"
#include "pvclient/training.hpp"

using namespace pvclient;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(192);

void BM_ForwardDefault(benchmark::State& state) {
  const model::PvClient net({}, {}, 42);
  const Tensor h = random_tensor({static_cast<std::size_t>(state.range(0)), 192, 6}, 3);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(h).final);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardDefault)->Arg(1)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardBackwardDefault(benchmark::State& state) {
  const model::PvClient net({}, {}, 42);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor h = random_tensor({batch, 192, 6}, 4);
  const Tensor target = random_tensor({batch, 96}, 5);
  for (auto _ : state) {
    for (const auto& p : net.parameters()) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    ad::backward(train::mse_loss(net.forward(h).final, target));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackwardDefault)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainEpochSlice(benchmark::State& state) {
  data::SynthOptions opts;
  opts.days = 12;
  const auto bench = eval::Benchmark::prepare(data::synth_station(opts).frame);
  auto windows = bench.train_windows(192, 96);
  windows.resize(256);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    model::PvClient net({}, {}, 42);
    benchmark::DoNotOptimize(train::train(net, windows, cfg).steps);
  }
  state.SetItemsProcessed(state.iterations() * windows.size());
}
BENCHMARK(BM_TrainEpochSlice)->Unit(benchmark::kMillisecond);

void BM_LinearRegressionFit(benchmark::State& state) {
  data::SynthOptions opts;
  opts.days = 20;
  const auto bench = eval::Benchmark::prepare(data::synth_station(opts).frame);
  const auto windows = bench.train_windows(192, 96, 4);
  for (auto _ : state) benchmark::DoNotOptimize(eval::LinearRegression::fit(windows).weights().data());
}
BENCHMARK(BM_LinearRegressionFit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
