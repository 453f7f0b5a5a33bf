#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/metrics.hpp"

using namespace twoscale;

namespace {

/// Scalar slow path sampled from f on the grid, history included.
TrajectoryBundle bundle_from(const TimeGrid& grid, const std::function<double(double)>& f, bool with_fast = false) {
  TrajectoryBundle b;
  b.grid = grid;
  b.dim = 1;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(grid.tau_steps)) * grid.step;
    b.slow.push_back(f(t));
    if (with_fast) b.fast.push_back(2.0 * f(t));
  }
  return b;
}

}  // namespace

TEST_CASE("sup_distance over a window") {
  const TimeGrid grid = TimeGrid::make(1.0, 0.25, 0.5);
  const auto a = bundle_from(grid, [](double t) { return t; }, true);
  const auto b = bundle_from(grid, [](double) { return 0.0; }, true);
  CHECK(sup_distance(a, b, 0.0, 1.0) == 1.0);
  CHECK(sup_distance(a, b, 0.0, 0.5) == 0.5);
  CHECK(sup_distance(a, b, 0.25, 0.25) == 0.25);
  CHECK(sup_distance(a, a, 0.0, 1.0) == 0.0);
  CHECK(sup_distance(a, b, 0.0, 1.0, PathComponent::Fast) == 2.0);
  // The segment at t = 0 reaches back to -0.5.
  CHECK(sup_distance(a, b, 0.0, 0.0, PathComponent::SlowSegment) == 0.5);
  CHECK(sup_distance(a, b, 0.0, 1.0, PathComponent::FastSegment) == 2.0);

  CHECK_THROWS_AS(sup_distance(a, b, 0.5, 0.25), UsageError);
  CHECK_THROWS_AS(sup_distance(a, b, 0.0, 1.5), UsageError);
  CHECK_THROWS_AS(sup_distance(a, b, 0.1, 0.5), UsageError);
  const auto other = bundle_from(TimeGrid::make(1.0, 0.125, 0.5), [](double) { return 0.0; });
  CHECK_THROWS_AS(sup_distance(a, other, 0.0, 1.0), UsageError);
  const auto slow_only = bundle_from(grid, [](double) { return 0.0; });
  CHECK_THROWS_AS(sup_distance(a, slow_only, 0.0, 1.0, PathComponent::Fast), UsageError);
}

TEST_CASE("sup_distance is a pseudometric on random bundles") {
  const TimeGrid grid = TimeGrid::make(1.0, 0.1, 0.2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  auto random_bundle = [&] {
    TrajectoryBundle b;
    b.grid = grid;
    for (std::size_t i = 0; i < grid.nodes(); ++i) b.slow.push_back(n(rng));
    return b;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_bundle(), b = random_bundle(), c = random_bundle();
    const double ab = sup_distance(a, b, 0.0, 1.0);
    CHECK(ab == sup_distance(b, a, 0.0, 1.0));
    CHECK(sup_distance(a, c, 0.0, 1.0) <= ab + sup_distance(b, c, 0.0, 1.0) + 1e-12);
    CHECK(sup_distance(a, b, 0.2, 0.6) <= ab);
  }
}

TEST_CASE("p_moment examples") {
  const std::vector<double> s{0.0, 2.0};
  const auto m1 = p_moment(s, 1.0);
  CHECK(m1.value == 1.0);
  CHECK(m1.std_error == doctest::Approx(1.0));
  const auto m2 = p_moment(s, 2.0);
  CHECK(m2.value == 2.0);
  CHECK(m2.std_error == doctest::Approx(2.0));
  CHECK(m2.paths == 2);
  CHECK(m2.p == 2.0);
  const std::vector<double> same{3.0, 3.0, 3.0};
  CHECK(p_moment(same, 1.5).value == doctest::Approx(std::pow(3.0, 1.5)));
  CHECK(p_moment(same, 1.5).std_error == 0.0);

  const std::vector<double> one{1.0};
  const std::vector<double> negative{1.0, -1.0};
  CHECK_THROWS_AS(p_moment(one, 2.0), UsageError);
  CHECK_THROWS_AS(p_moment(s, 0.0), UsageError);
  CHECK_THROWS_AS(p_moment(negative, 2.0), UsageError);
}

TEST_CASE("p_moment satisfies Jensen across p") {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(20);
    for (double& v : s) v = e(rng);
    const double m1 = p_moment(s, 1.0).value;
    const double m2 = p_moment(s, 2.0).value;
    const double m4 = p_moment(s, 4.0).value;
    CHECK(m1 * m1 <= m2 * (1.0 + 1e-12));
    CHECK(m2 * m2 <= m4 * (1.0 + 1e-12));
  }
}

TEST_CASE("linear_fit") {
  const std::vector<double> xs{0.0, 1.0, 2.0, 3.0};
  const std::vector<double> ys{1.0, 3.0, 5.0, 7.0};
  const auto f = linear_fit(xs, ys);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r_squared == doctest::Approx(1.0));
  CHECK(f.slope_std_error == doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<double> noisy{1.0, 3.5, 4.5, 7.0};
  const auto g = linear_fit(xs, noisy);
  CHECK(g.slope == doctest::Approx(1.9));
  CHECK(g.r_squared < 1.0);
  CHECK(g.slope_std_error > 0.0);

  const std::vector<double> flat{2.0, 2.0, 2.0, 2.0};
  CHECK(linear_fit(xs, flat).r_squared == 1.0);
  CHECK_THROWS_AS(linear_fit(flat, ys), UsageError);
  CHECK_THROWS_AS(linear_fit(std::vector<double>{1.0}, std::vector<double>{1.0}), UsageError);
}

TEST_CASE("slope_fit recovers power laws") {
  const std::vector<double> xs{0.4, 0.1, 0.2, 0.8};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(3.0 * x * x);
  const auto f = slope_fit(xs, ys);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(std::log(3.0)));
  CHECK(f.r_squared == doctest::Approx(1.0));
  CHECK(f.xs == std::vector<double>{0.1, 0.2, 0.4, 0.8});
  CHECK(f.ys.front() == doctest::Approx(0.03));

  const std::vector<double> sqrt_law{1.0, std::sqrt(2.0), 2.0};
  CHECK(slope_fit(std::vector<double>{1.0, 2.0, 4.0}, sqrt_law).slope == doctest::Approx(0.5));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<double> nx, ny;
  for (int i = 0; i < 8; ++i) {
    nx.push_back(std::pow(2.0, -i));
    ny.push_back(3.0 * std::pow(nx.back(), 1.5) * (1.0 + noise(rng)));
  }
  CHECK(std::abs(slope_fit(nx, ny).slope - 1.5) <= 0.1);

  CHECK_THROWS_AS(slope_fit(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}), UsageError);
  CHECK_THROWS_AS(slope_fit(std::vector<double>{1.0, 2.0, 0.0}, sqrt_law), UsageError);
  CHECK_THROWS_AS(slope_fit(std::vector<double>{1.0, 2.0, 2.0}, sqrt_law), UsageError);
}

TEST_CASE("segment displacement of a linear path") {
  const TimeGrid grid = TimeGrid::make(1.0, 0.125, 0.5);
  const auto b = bundle_from(grid, [](double t) { return 2.0 * t; });
  // At t = 0.375 with delta = 0.25 the breakpoint is 0.25; the segments differ by 2 * 0.125 everywhere.
  const std::vector<double> at{0.375};
  CHECK(segment_displacement_moment(b, 0.25, 1.0, at) == doctest::Approx(0.25));
  CHECK(segment_displacement_moment(b, 0.25, 2.0, at) == doctest::Approx(0.0625));
  // On a breakpoint the displacement is zero.
  const std::vector<double> on{0.5};
  CHECK(segment_displacement_moment(b, 0.25, 1.0, on) == 0.0);

  const std::vector<double> all{0.125, 0.25, 0.375, 0.5};
  CHECK(segment_displacement_moment(b, 0.25, 1.0, all) == doctest::Approx((0.25 + 0.0 + 0.25 + 0.0) / 4.0));

  const std::vector<TrajectoryBundle> two{b, bundle_from(grid, [](double t) { return -t; })};
  const auto per = segment_displacement_per_path(two, 0.25, 1.0, at);
  REQUIRE(per.size() == 2);
  CHECK(per[0] == doctest::Approx(0.25));
  CHECK(per[1] == doctest::Approx(0.125));
  CHECK(segment_displacement_moment(two, 0.25, 1.0, at) == doctest::Approx(0.1875));

  CHECK_THROWS_AS(segment_displacement_moment(b, 0.3, 1.0, at), UsageError);
  CHECK_THROWS_AS(segment_displacement_moment(b, 0.25, 1.0, std::vector<double>{0.0}), UsageError);
  CHECK_THROWS_AS(segment_displacement_moment(b, 0.25, 1.0, std::vector<double>{}), UsageError);
}
