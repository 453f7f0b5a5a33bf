#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "twoscale/averaging.hpp"
#include "twoscale/errors.hpp"

using namespace twoscale;

namespace {

Segment constant1(double tau, double h, double v) {
  const std::vector<double> c{v};
  return Segment::constant(tau, h, c);
}

}  // namespace

TEST_CASE("khasminskii delta examples") {
  const auto s = khasminskii_delta(0.01, 1.0);
  CHECK(s.delta_raw == doctest::Approx(0.021460).epsilon(1e-4));
  CHECK(s.blocks_per_tau == 47);
  CHECK(s.delta == doctest::Approx(1.0 / 47.0));
  CHECK(s.delta <= s.delta_raw);
  CHECK(s.epsilon == 0.01);

  const auto t = khasminskii_delta(0.1, 1.0);
  CHECK(t.delta_raw == doctest::Approx(0.1 * std::sqrt(std::log(10.0))));
  CHECK(t.blocks_per_tau == 7);
}

TEST_CASE("khasminskii delta domain") {
  const double boundary = std::exp(-1.0);
  CHECK_THROWS_AS(khasminskii_delta(boundary, 1.0), DomainError);
  CHECK_THROWS_AS(khasminskii_delta(0.5, 1.0), DomainError);
  CHECK_THROWS_AS(khasminskii_delta(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(khasminskii_delta(0.01, 0.0), DomainError);
  CHECK_NOTHROW(khasminskii_delta(std::nextafter(boundary, 0.0), 1.0));
}

TEST_CASE("khasminskii delta is monotone and stays below delta_raw") {
  double previous = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double eps = 1e-4 * std::pow(0.3 / 1e-4, static_cast<double>(i) / 99.0);
    const auto s = khasminskii_delta(eps, 1.0);
    CHECK(s.delta <= s.delta_raw);
    CHECK(s.delta > 0.0);
    CHECK(s.delta >= previous);
    CHECK(eps / s.delta_raw == doctest::Approx(1.0 / std::sqrt(-std::log(eps))));
    CHECK(static_cast<double>(s.blocks_per_tau) * s.delta == doctest::Approx(1.0));
    previous = s.delta;
  }
}

TEST_CASE("breakpoints") {
  CHECK(breakpoint(0.0, 0.1) == 0.0);
  CHECK(breakpoint(0.25, 0.1) == doctest::Approx(0.2));
  CHECK(breakpoint(0.5, 0.25) == 0.5);
  CHECK(breakpoint(0.75, 0.5) == 0.5);
  CHECK(breakpoint(1.0, 1.0 / 47.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(breakpoint(-0.1, 0.1), DomainError);
  CHECK_THROWS_AS(breakpoint(0.1, 0.0), DomainError);
  for (int i = 0; i < 1000; ++i) {
    const double t = 0.0137 * i;
    const double delta = 1.0 / 47.0;
    const double b = breakpoint(t, delta);
    CHECK(b <= t);
    CHECK(t < b + delta);
    CHECK(breakpoint(b, delta) == b);
  }
}

TEST_CASE("auxiliary resets to Y at every breakpoint") {
  const double tau = 1.0, h = 1.0 / 470.0, eps = 0.05;
  const TimeGrid grid = TimeGrid::make(2.0, h, tau);
  const LinearBenchmarkParams p{-1.0, 1.0, 0.3, 1.0, 2.0, 0.5, 0.3};
  const NoiseStream w1(4, {0, Driver::W1, 0}, 1), w2(4, {0, Driver::W2, 0}, 1);
  const auto paths = simulate_auxiliary(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0),
                                        eps, 1.0 / 47.0, grid, w1, w2);
  CHECK(paths.block_steps == 10);
  CHECK(paths.auxiliary.label == PathLabel::Auxiliary);
  for (std::size_t k = 0; k <= grid.steps; k += paths.block_steps) {
    CHECK(paths.auxiliary.fast_at(k)[0] == paths.coupled.fast_at(k)[0]);
  }
  // The coupled half matches a standalone run under the same streams.
  const auto direct = simulate_coupled(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0),
                                       eps, grid, w1, w2);
  CHECK(direct.slow == paths.coupled.slow);
  CHECK_THROWS_AS(simulate_auxiliary(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0), eps,
                                     1.5 * h, grid, w1, w2),
                  UsageError);
}

TEST_CASE("one block covering the horizon freezes the slow input at time 0") {
  const double tau = 0.5, h = 0.005, eps = 0.1;
  const TimeGrid grid = TimeGrid::make(1.0, h, tau);
  const LinearBenchmarkParams p{-1.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0};
  const NoiseStream w1(1, {0, Driver::W1, 0}, 1), w2(1, {0, Driver::W2, 0}, 1);
  const auto paths = simulate_auxiliary(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0),
                                        eps, 2.0, grid, w1, w2);
  // With the slow input frozen at xi, Y~ solves the frozen benchmark and X~
  // moves by a11 xi + a12 Y~ only.
  double x = 1.0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    x += h * (-1.0 + paths.auxiliary.fast_at(k)[0]);
    CHECK(paths.auxiliary.slow_at(k + 1)[0] == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("small blocks track the coupled path") {
  const double tau = 1.0, h = 1.0 / 4700.0, eps = 0.01;
  const TimeGrid grid = TimeGrid::make(1.0, h, tau);
  const LinearBenchmarkParams p{-1.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0};
  const NoiseStream w1(1, {0, Driver::W1, 0}, 1), w2(1, {0, Driver::W2, 0}, 1);
  const auto fine = simulate_auxiliary(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0),
                                       eps, 10.0 * h, grid, w1, w2);
  const auto coarse = simulate_auxiliary(linear_benchmark(p, tau), constant1(tau, h, 1.0), constant1(tau, h, 0.0),
                                         eps, 0.25, grid, w1, w2);
  double gap_fine = 0.0, gap_coarse = 0.0;
  for (std::size_t k = 0; k <= grid.steps; ++k) {
    gap_fine = std::max(gap_fine, std::abs(fine.auxiliary.slow_at(k)[0] - fine.coupled.slow_at(k)[0]));
    gap_coarse = std::max(gap_coarse, std::abs(coarse.auxiliary.slow_at(k)[0] - coarse.coupled.slow_at(k)[0]));
  }
  CHECK(gap_fine < gap_coarse);
  CHECK(gap_fine < 0.01);
}

TEST_CASE("averaged benchmark is an Ornstein-Uhlenbeck process") {
  const double tau = 1.0, h = 1e-3, s1 = 0.5;
  const LinearBenchmarkParams p{-1.0, 1.0, s1, 1.0, 2.0, 0.5, 0.0};
  const double kappa = p.averaged_rate();
  const TimeGrid grid = TimeGrid::make(1.0, h, tau);
  const std::size_t paths = 10000;
  std::vector<double> ends(paths);
  for (std::size_t i = 0; i < paths; ++i) {
    const auto b = simulate_averaged(linear_benchmark(p, tau), constant1(tau, h, 1.0), closed_form_drift(p), grid,
                                     NoiseStream(21, {i, Driver::W1, 0}, 1));
    ends[i] = b.slow_at(grid.steps)[0];
  }
  const double var = oracle::ou_variance(kappa, s1, 1.0);
  CHECK(var == doctest::Approx(0.18246).epsilon(1e-4));
  CHECK(std::abs(oracle::mean(ends) - oracle::ou_mean(kappa, 1.0, 1.0)) <=
        4.0 * std::sqrt(var / static_cast<double>(paths)));
  CHECK(oracle::variance(ends) == doctest::Approx(var).epsilon(0.05));
}

TEST_CASE("deterministic averaged path is exp(kappa t)") {
  const double tau = 1.0, h = 1e-3;
  const LinearBenchmarkParams p;
  const auto b = simulate_averaged(linear_benchmark(p, tau), constant1(tau, h, 1.0), closed_form_drift(p),
                                   TimeGrid::make(1.0, h, tau), NoiseStream(1, {0, Driver::W1, 0}, 1));
  CHECK(b.label == PathLabel::Averaged);
  CHECK(b.slow_at(1000)[0] == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(2e-3));
  CHECK_THROWS_AS(simulate_averaged(linear_benchmark(p, tau), constant1(tau, h, 1.0), DriftSource{},
                                    TimeGrid::make(1.0, h, tau), NoiseStream(1, {0, Driver::W1, 0}, 1)),
                  UsageError);
}

TEST_CASE("estimated drift agrees with the closed form and memoizes") {
  const LinearBenchmarkParams p{-1.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.3};
  EstimatorConfig cfg;
  cfg.burn_in = 5.0;
  cfg.horizon = 20.0;
  cfg.step = 0.01;
  cfg.replicas = 8;
  cfg.seed = 2;
  EstimatedDrift drift(linear_benchmark(p, 1.0), cfg);
  const auto zeta = constant1(1.0, 0.01, 1.0);
  std::vector<double> a(1), b(1), c(1);
  drift(zeta, a);
  CHECK(a[0] == doctest::Approx(-1.0 / 3.0).epsilon(0.06));
  drift(zeta, b);
  CHECK(b == a);
  CHECK(drift.evaluations() == 1);
  CHECK(drift.cache_hits() == 1);
  // A value inside the same quantum cell reuses the entry.
  drift(constant1(1.0, 0.01, 1.0 + 1e-6), c);
  CHECK(c == a);
  CHECK(drift.cache_hits() == 2);
  CHECK(drift.max_std_error() > 0.0);

  // Without memoization every call re-estimates but yields the same value.
  EstimatedDrift plain(linear_benchmark(p, 1.0), cfg, false);
  plain(zeta, b);
  plain(zeta, c);
  CHECK(plain.evaluations() == 2);
  CHECK(b == a);
  CHECK(c == a);

  CHECK_THROWS_AS(EstimatedDrift(linear_benchmark(p, 1.0), cfg, true, 0.0), UsageError);
}
