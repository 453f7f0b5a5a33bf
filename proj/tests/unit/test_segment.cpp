#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "twoscale/errors.hpp"
#include "twoscale/segment.hpp"

using namespace twoscale;

namespace {

Segment scalar(double tau, double h, std::vector<double> values) { return Segment(tau, h, 1, std::move(values)); }

Segment random_segment(std::mt19937_64& rng, std::size_t nodes, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> v(nodes * dim);
  for (double& x : v) x = n(rng);
  return Segment(1.0, 1.0 / static_cast<double>(nodes - 1), dim, v);
}

}  // namespace

TEST_CASE("grid_intervals accepts exact ratios and rejects the rest") {
  CHECK(grid_intervals(1.0, 0.1) == 10);
  CHECK(grid_intervals(1.0, 1.0 / 47.0) == 47);
  CHECK(grid_intervals(0.1, 0.0025) == 40);
  CHECK_THROWS_AS(grid_intervals(1.0, 0.3), DomainError);
  CHECK_THROWS_AS(grid_intervals(1.0, 2.0), DomainError);
  CHECK_THROWS_AS(grid_intervals(0.0, 0.1), DomainError);
  CHECK_THROWS_AS(grid_intervals(1.0, -0.1), DomainError);
}

TEST_CASE("construction validates node count and finiteness") {
  CHECK_THROWS_AS(Segment(1.0, 0.5, 1, {1.0, 2.0}), UsageError);
  CHECK_THROWS_AS(Segment(1.0, 0.5, 1, {1.0, NAN, 2.0}), DataError);
  CHECK_NOTHROW(Segment(1.0, 0.5, 2, {1, 2, 3, 4, 5, 6}));
}

TEST_CASE("sup_norm") {
  const std::vector<double> c{3.0, 4.0};
  CHECK(Segment::constant(1.0, 0.25, c).sup_norm() == 5.0);
  CHECK(Segment::zero(1.0, 0.25, 3).sup_norm() == 0.0);
  CHECK(scalar(1.0, 0.5, {-1.0, 2.0, -3.0}).sup_norm() == 3.0);
}

TEST_CASE("sup_norm is a norm on random segments") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Segment a = random_segment(rng, 9, 2);
    const Segment b = random_segment(rng, 9, 2);
    const double lambda = std::normal_distribution<double>(0.0, 3.0)(rng);
    std::vector<double> scaled(a.values()), sum(a.values());
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scaled[i] *= lambda;
      sum[i] += b.values()[i];
    }
    const double ns = Segment(1.0, 0.125, 2, scaled).sup_norm();
    CHECK(ns == doctest::Approx(std::abs(lambda) * a.sup_norm()).epsilon(1e-14));
    CHECK(Segment(1.0, 0.125, 2, sum).sup_norm() <= a.sup_norm() + b.sup_norm() + 1e-12);
  }
}

TEST_CASE("eval interpolates linearly and hits nodes exactly") {
  const Segment s = scalar(1.0, 0.5, {5.0, 0.0, 2.0});
  CHECK(s.eval(-1.0)[0] == 5.0);
  CHECK(s.eval(-0.25)[0] == doctest::Approx(1.0));
  CHECK(s.eval(0.0)[0] == 2.0);
  const std::vector<double> c{1.5};
  CHECK(Segment::constant(1.0, 0.1, c).eval(0.0)[0] == 1.5);

  // Bit-exact at every grid node, including ones that are not dyadic.
  std::mt19937_64 rng(2);
  const Segment r = Segment(1.0, 0.1, 1, [&] {
    std::vector<double> v(11);
    for (double& x : v) x = std::normal_distribution<double>()(rng);
    return v;
  }());
  for (std::size_t i = 0; i <= 10; ++i) {
    const double theta = -1.0 + static_cast<double>(i) * 0.1;
    CHECK(r.eval(theta)[0] == r.at(i)[0]);
  }
}

TEST_CASE("eval clamps tiny overshoots and rejects real ones") {
  const Segment s = scalar(1.0, 0.5, {5.0, 0.0, 2.0});
  CHECK(s.eval(1e-8)[0] == 2.0);
  CHECK(s.eval(-1.0 - 1e-8)[0] == 5.0);
  CHECK_THROWS_AS(s.eval(0.01), DomainError);
  CHECK_THROWS_AS(s.eval(-1.1), DomainError);
}

TEST_CASE("shift_append") {
  const std::vector<double> c{0.7};
  const Segment k = Segment::constant(1.0, 0.25, c);
  CHECK(k.shift_append(c) == k);

  const Segment s = scalar(1.0, 0.5, {1.0, 2.0, 3.0});
  const std::vector<double> four{4.0};
  CHECK(s.shift_append(four).values() == std::vector<double>{2.0, 3.0, 4.0});

  const std::vector<double> v{3.0, -4.0};
  CHECK(Segment::zero(1.0, 0.5, 2).shift_append(v).sup_norm() == 5.0);

  const std::vector<double> bad{INFINITY};
  CHECK_THROWS_AS(s.shift_append(bad), DataError);
}

TEST_CASE("shift_append replays a known path") {
  auto path = [](double t) { return std::sin(3.0 * t) + 0.1 * t; };
  const double h = 0.05;
  const Segment start = Segment::sample(1.0, h, path);
  Segment s = start;
  const std::size_t steps = start.nodes() + 3;
  for (std::size_t k = 1; k <= steps; ++k) {
    const std::vector<double> next{path(static_cast<double>(k) * h)};
    s = s.shift_append(next);
  }
  // Node i of the final window holds the value appended at step steps - M + i.
  const std::size_t m = s.intervals();
  for (std::size_t i = 0; i < s.nodes(); ++i) {
    CHECK(s.at(i)[0] == path(static_cast<double>(steps - m + i) * h));
  }
}

TEST_CASE("lipschitz_modulus") {
  const std::vector<double> c{2.0};
  CHECK(Segment::constant(1.0, 0.1, c).lipschitz_modulus() == 0.0);
  CHECK(Segment::sample(1.0, 0.125, [](double t) { return 2.0 * t + 1.0; }).lipschitz_modulus() ==
        doctest::Approx(2.0));
  CHECK(scalar(1.0, 0.5, {1.0, -1.0, 1.0}).lipschitz_modulus() == 4.0);
  // A 3-Lipschitz analytic path never exceeds 3.
  const Segment sine = Segment::sample(1.0, 0.001, [](double t) { return std::sin(3.0 * t); });
  CHECK(sine.lipschitz_modulus() <= 3.0 * (1.0 + 1e-6));
}

TEST_CASE("sup_distance between views") {
  const Segment a = scalar(1.0, 0.5, {0.0, 1.0, 2.0});
  const Segment b = scalar(1.0, 0.5, {0.5, 1.0, -1.0});
  CHECK(sup_distance(a, b) == 3.0);
  CHECK(sup_distance(a, a) == 0.0);
  CHECK_THROWS_AS(sup_distance(a, Segment::zero(1.0, 0.25, 1)), UsageError);
}

TEST_CASE("resample keeps a linear path exact") {
  const Segment coarse = Segment::sample(1.0, 0.25, [](double t) { return 1.0 - 2.0 * t; });
  const Segment fine = coarse.resample(0.05);
  CHECK(fine.nodes() == 21);
  for (std::size_t i = 0; i < fine.nodes(); ++i) {
    CHECK(fine.at(i)[0] == doctest::Approx(1.0 - 2.0 * (-1.0 + 0.05 * static_cast<double>(i))));
  }
}

TEST_CASE("JSON round trip and error reporting") {
  const Segment s(1.0, 0.5, 2, {1, 2, 3, 4, 5, 6});
  nlohmann::json j;
  to_json(j, s);
  CHECK(j.at("n") == 2);
  CHECK(j.at("values").size() == 3);
  CHECK(segment_from_json(j) == s);
  CHECK(segment_from_json(nlohmann::json::parse(j.dump())) == s);

  CHECK_THROWS_AS(segment_from_json(nlohmann::json{{"tau", 1.0}}), ConfigError);
  auto bad = j;
  bad["values"] = {{1, 2}, {3, 4}};
  CHECK_THROWS_AS(segment_from_json(bad), ConfigError);
}
