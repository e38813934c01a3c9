// Copyright 2026 The msavg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <array>

#include <benchmark/benchmark.h>

#include "msavg/averaging.hpp"
#include "msavg/catalog.hpp"
#include "msavg/cell.hpp"
#include "msavg/functionals.hpp"
#include "msavg/path.hpp"
#include "msavg/rng.hpp"

namespace msavg {
namespace {

void BM_PhiloxBlock(benchmark::State& state) {
  Philox4x64::Counter ctr{0, 0, 0, 0};
  for (auto _ : state) {
    ++ctr[0];
    benchmark::DoNotOptimize(Philox4x64::generate(ctr, {7, 11}));
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_PhiloxBlock);

void BM_BoxMullerNormals(benchmark::State& state) {
  const NormalStream s(7, 11, Stream::kInitial);
  std::array<double, 4> out{};
  std::uint64_t step = 0;
  for (auto _ : state) {
    s.fill(step++, out);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_BoxMullerNormals);

void BM_ZigguratNormal(benchmark::State& state) {
  NormalSequence s(7, 11, Stream::kMultiscale);
  for (auto _ : state) benchmark::DoNotOptimize(s.next());
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ZigguratNormal);

void BM_CellSolve(benchmark::State& state) {
  const MultiscaleModel model = make_model("ou");
  CellOptions opt;
  opt.backend = state.range(1) ? CellBackend::kAnalyticOu : CellBackend::kNumericFd;
  opt.grid_nodes = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(CellSolution::solve(model.coeffs, Vec::Constant(1, 0.3), 0.0, opt));
  }
}
BENCHMARK(BM_CellSolve)->Args({129, 0})->Args({257, 0})->Args({513, 0})->Args({257, 1})->Unit(benchmark::kMicrosecond);

void BM_AverageForwardGrid(benchmark::State& state) {
  const MultiscaleModel model = make_model("ou");
  const ComparableSpec cmp = shifted_comparable(model.coeffs, ComparableKind::kForward, {1.0, 0, 0.5, 0});
  const XtGrid grid = XtGrid::uniform(-8, 8, 33, 1.0, 1);
  AveragingOptions ao;
  ao.cell.backend = state.range(0) ? CellBackend::kAnalyticOu : CellBackend::kNumericFd;
  for (auto _ : state) {
    const AveragedModel avg = compute_averaged_coefficients(model.coeffs, &cmp, grid, ao);
    benchmark::DoNotOptimize(compute_extended_forward(model.coeffs, cmp, avg, ao));
  }
}
BENCHMARK(BM_AverageForwardGrid)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

// Path-step throughput of the multiscale Euler step with and without the forward functional.
void BM_MultiscaleSteps(benchmark::State& state) {
  const MultiscaleModel model = make_model("ou", {{"eps", 0.1}, {"burn_in", 0.0}, {"noise_corr", 0.5}});
  const ForwardEpsilonSet set(model, shifted_comparable(model.coeffs, ComparableKind::kForward, {1.0, 0, 0.5, 0}));
  SimulationOptions opt;
  opt.n_paths = 1000;
  opt.dt = 1e-3 * 0.01;
  opt.records = 10;
  opt.workers = 1;
  MultiscaleModel shortened = model;
  shortened.T = 0.01;
  std::vector<const IntegrandSet*> sets;
  if (state.range(0)) sets.push_back(&set);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_multiscale(shortened, sets, opt));
  state.SetItemsProcessed(state.iterations() * opt.n_paths * 1000);
}
BENCHMARK(BM_MultiscaleSteps)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace msavg

BENCHMARK_MAIN();
