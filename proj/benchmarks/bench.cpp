// Hot paths at desk geometry: network forward, the JVP behind the mean-flow
// target, one gradient of each loss, and the STFT pair.

#include <benchmark/benchmark.h>

#include "meanse/autodiff.hpp"
#include "meanse/frontend.hpp"
#include "meanse/network.hpp"
#include "meanse/sampler.hpp"
#include "meanse/training.hpp"

using namespace meanse;
using ad::NdArray;

namespace {

NdArray noise(std::size_t rows, std::size_t cols, Rng& rng, double scale = 0.3) {
  NdArray a(ad::Shape{rows, cols});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = scale * rng.normal();
  return a;
}

const net::NetworkConfig& desk_geometry() {
  static const net::NetworkConfig cfg;
  return cfg;
}

void BM_Forward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const net::VelocityNetwork net(desk_geometry(), net::Mode::meanflow, 1);
  Rng rng(2);
  const auto x = noise(rows, desk_geometry().data_dim(), rng), y = noise(rows, desk_geometry().data_dim(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, 0.2, 0.7, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_MeanFlowTarget(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const net::VelocityNetwork net(desk_geometry(), net::Mode::meanflow, 1);
  Rng rng(3);
  const std::size_t d = desk_geometry().data_dim();
  const auto x = noise(rows, d, rng), y = noise(rows, d, rng), v = noise(rows, d, rng);
  const std::vector<double> r(rows, 0.2), t(rows, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(train::mf_target(net, net.params().arrays, x, r, t, y, v));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_MeanFlowTarget)->Arg(64)->Unit(benchmark::kMillisecond);

template <bool MeanFlow>
void BM_LossGradient(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const net::VelocityNetwork net(desk_geometry(), MeanFlow ? net::Mode::meanflow : net::Mode::flow, 1);
  Rng rng(4);
  const std::size_t d = desk_geometry().data_dim();
  const train::Batch batch{noise(rows, d, rng), noise(rows, d, rng)};
  const path::PathConfig pc;
  for (auto _ : state) {
    Rng r(5);
    benchmark::DoNotOptimize(ad::grad(
        [&](ad::Tape& tape, std::span<const ad::Var> p) {
          return MeanFlow ? train::mf_loss(tape, net, p, batch, r, pc, 0.75, 1.0)
                          : train::cfm_loss(tape, net, p, batch, r, pc);
        },
        net.params().arrays));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_LossGradient<false>)->Name("BM_FlowLossGradient")->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossGradient<true>)->Name("BM_MeanFlowLossGradient")->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Stft(benchmark::State& state) {
  const frontend::StftConfig cfg{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                                 frontend::Window::hann, 8000};
  frontend::Stft stft(cfg);
  Rng rng(6);
  frontend::Waveform w(16000);
  for (auto& v : w) v = rng.normal();
  for (auto _ : state) {
    const auto spec = stft.forward(w);
    benchmark::DoNotOptimize(stft.inverse(spec, w.size()));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_Stft)->Args({126, 32})->Args({1022, 320})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
