#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "twoscale/frozen.hpp"
#include "twoscale/noise.hpp"
#include "twoscale/solver.hpp"
#include "twoscale/systems.hpp"

using namespace twoscale;

namespace {

Segment constant1(double tau, double h, double v) {
  const std::vector<double> c{v};
  return Segment::constant(tau, h, c);
}

void BM_GaussianIncrements(benchmark::State& state) {
  const auto count = static_cast<std::size_t>(state.range(0));
  std::vector<double> out(count);
  NoiseStream w(1, {0, Driver::W1, 0}, 1);
  for (auto _ : state) {
    w.gaussian_increments(out, 1e-3);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GaussianIncrements)->Arg(1 << 10)->Arg(1 << 16);

void BM_CoupledSolver(benchmark::State& state) {
  const double tau = 1.0;
  const double h = 1.0 / static_cast<double>(state.range(0));
  const auto spec = linear_benchmark({-1.0, 1.0, 0.3, 1.0, 2.0, 0.5, 0.3}, tau);
  const TimeGrid grid = TimeGrid::make(1.0, h, tau);
  const auto xi = constant1(tau, h, 1.0);
  const auto eta = constant1(tau, h, 0.0);
  std::uint64_t path = 0;
  for (auto _ : state) {
    auto b = simulate_coupled(spec, xi, eta, std::min(1.0, 10.0 * h), grid, NoiseStream(3, {path, Driver::W1, 0}, 1),
                              NoiseStream(3, {path, Driver::W2, 0}, 1));
    benchmark::DoNotOptimize(b.slow.data());
    ++path;
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.steps));
}
BENCHMARK(BM_CoupledSolver)->Arg(1000)->Arg(10000);

void BM_Assignment(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> cost(n * n);
  for (double& c : cost) c = u(rng);
  for (auto _ : state) {
    auto result = solve_assignment(cost, n);
    benchmark::DoNotOptimize(result.first);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Assignment)->RangeMultiplier(2)->Range(8, 256)->Complexity(benchmark::oNCubed);

void BM_Wasserstein(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  auto sample = [&] {
    std::vector<Segment> out;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(101);
      for (double& x : v) x = g(rng);
      out.emplace_back(1.0, 0.01, 1, v);
    }
    return out;
  };
  const auto a = sample(), b = sample();
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2_truncated(a, b));
}
BENCHMARK(BM_Wasserstein)->Arg(32)->Arg(128);

}  // namespace
BENCHMARK_MAIN();
