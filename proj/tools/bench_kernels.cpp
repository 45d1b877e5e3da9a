// Serial reference against the OpenMP path loop for regularized solves.

#include <benchmark/benchmark.h>

#include "stochflow/fields.hpp"
#include "stochflow/integrate.hpp"
#include "stochflow/parallel.hpp"
#include "stochflow/wiener.hpp"

namespace {

using namespace stochflow;

const VectorFieldSystem& bench_system() {
  static const VectorFieldSystem sys(families::log_growth(2, 2, 1.0, 1.0, 0.5), "log-growth");
  return sys;
}

double solve_one(std::size_t k, int level) {
  const auto path = sample_path(level, 2, 7, k);
  const auto traj = solve_regularized(bench_system(), path, level, Vector{1.0, 0.5});
  return traj.states.back()[0];
}

void BM_SerialPaths(benchmark::State& state) {
  const auto paths = static_cast<std::size_t>(state.range(0));
  const int level = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto out = serial_map(paths, [&](std::size_t k) { return solve_one(k, level); });
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(paths));
}

void BM_ParallelPaths(benchmark::State& state) {
  const auto paths = static_cast<std::size_t>(state.range(0));
  const int level = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto out = parallel_map(paths, 0, [&](std::size_t k) { return solve_one(k, level); });
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(paths));
}

void BM_FieldKernel(benchmark::State& state) {
  const Vector x{0.3, -1.2};
  Vector a0(2), ai(4);
  bench_system().with_kernel([&](auto& kernel) {
    for (auto _ : state) {
      kernel.evaluate(x.data(), a0.data(), ai.data());
      benchmark::DoNotOptimize(ai.data());
    }
  });
}

}  // namespace

BENCHMARK(BM_SerialPaths)->Args({64, 8})->Args({64, 12})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParallelPaths)->Args({64, 8})->Args({64, 12})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FieldKernel);

BENCHMARK_MAIN();
