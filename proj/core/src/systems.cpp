#include "twoscale/systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "twoscale/errors.hpp"
#include "twoscale/noise.hpp"

namespace twoscale {

double LinearBenchmarkParams::frozen_mean(double zeta0) const {
  if (c2 == c3) throw DomainError("frozen mean undefined for c2 == c3");
  return c1 * zeta0 / (c2 - c3);
}

double LinearBenchmarkParams::averaged_rate() const {
  if (c2 == c3) throw DomainError("averaged rate undefined for c2 == c3");
  return a11 + a12 * c1 / (c2 - c3);
}

void to_json(nlohmann::json& j, const LinearBenchmarkParams& p) {
  j = nlohmann::json{{"a11", p.a11}, {"a12", p.a12}, {"s1", p.s1}, {"c1", p.c1},
                     {"c2", p.c2},   {"c3", p.c3},   {"s2", p.s2}};
}

void from_json(const nlohmann::json& j, LinearBenchmarkParams& p) {
  static const char* const kKeys[] = {"a11", "a12", "s1", "c1", "c2", "c3", "s2"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
        std::end(kKeys)) {
      throw ConfigError("unknown linear_benchmark parameter '" + key + "'");
    }
  }
  p.a11 = j.value("a11", p.a11);
  p.a12 = j.value("a12", p.a12);
  p.s1 = j.value("s1", p.s1);
  p.c1 = j.value("c1", p.c1);
  p.c2 = j.value("c2", p.c2);
  p.c3 = j.value("c3", p.c3);
  p.s2 = j.value("s2", p.s2);
}

SystemSpec linear_benchmark(const LinearBenchmarkParams& p, double tau) {
  SystemSpec spec;
  spec.name = "linear_benchmark";
  spec.n = 1;
  spec.m = 1;
  spec.tau = tau;
  spec.b1 = [a11 = p.a11, a12 = p.a12](const SegmentView& chi, const SegmentView& phi,
                                       std::span<double> out) {
    out[0] = a11 * chi.newest()[0] + a12 * phi.newest()[0];
  };
  spec.sigma1 = [s1 = p.s1](const SegmentView&, std::span<double> out) { out[0] = s1; };
  spec.b2 = [c1 = p.c1, c2 = p.c2, c3 = p.c3](const SegmentView& chi, std::span<const double> x,
                                              std::span<const double> y, std::span<double> out) {
    out[0] = c1 * chi.newest()[0] - c2 * x[0] + c3 * y[0];
  };
  spec.sigma2 = [s2 = p.s2](const SegmentView&, std::span<const double>, std::span<const double>,
                            std::span<double> out) { out[0] = s2; };
  return spec;
}

// ---------------------------------------------------------------------------
// Registry

namespace {

// b2 = mu - x with constant sigma2; b1(chi, phi) = w_chi chi(0) + w_phi phi(0).
SystemSpec make_relaxation(const nlohmann::json& params, double tau) {
  const double mu = params.value("mu", 0.0);
  const double rate = params.value("rate", 1.0);
  const double s1 = params.value("s1", 0.0);
  const double s2 = params.value("s2", 0.0);
  const double w_chi = params.value("w_chi", 0.0);
  const double w_phi = params.value("w_phi", 1.0);
  SystemSpec spec;
  spec.name = "relaxation";
  spec.tau = tau;
  spec.b1 = [=](const SegmentView& chi, const SegmentView& phi, std::span<double> out) {
    out[0] = w_chi * chi.newest()[0] + w_phi * phi.newest()[0];
  };
  spec.sigma1 = [=](const SegmentView&, std::span<double> out) { out[0] = s1; };
  spec.b2 = [=](const SegmentView&, std::span<const double> x, std::span<const double>,
                std::span<double> out) { out[0] = rate * (mu - x[0]); };
  spec.sigma2 = [=](const SegmentView&, std::span<const double>, std::span<const double>,
                    std::span<double> out) { out[0] = s2; };
  return spec;
}

// Deliberately super-linear slow drift, b1 = ||chi||^2. Used to exercise the
// growth checker's failure path.
SystemSpec make_superlinear(const nlohmann::json& params, double tau) {
  const double s1 = params.value("s1", 0.0);
  SystemSpec spec = make_relaxation(nlohmann::json::object(), tau);
  spec.name = "superlinear_drift";
  spec.b1 = [](const SegmentView& chi, const SegmentView&, std::span<double> out) {
    const double r = chi.sup_norm();
    out[0] = r * r;
  };
  spec.sigma1 = [=](const SegmentView&, std::span<double> out) { out[0] = s1; };
  return spec;
}

// Segment-functional slow coefficients on top of the linear fast benchmark:
// b1 = a * (node mean of chi) + b * phi(0), sigma1 = s1 * tanh(chi(-tau)).
SystemSpec make_window_mean(const nlohmann::json& params, double tau) {
  const double a = params.value("a", -1.0);
  const double b = params.value("b", 1.0);
  const double s1 = params.value("s1", 0.0);
  const double c1 = params.value("c1", 1.0);
  const double c2 = params.value("c2", 2.0);
  const double c3 = params.value("c3", 0.5);
  const double s2 = params.value("s2", 0.0);
  SystemSpec spec = linear_benchmark(LinearBenchmarkParams{0.0, 0.0, 0.0, c1, c2, c3, s2}, tau);
  spec.name = "window_mean";
  spec.b1 = [=](const SegmentView& chi, const SegmentView& phi, std::span<double> out) {
    double sum = 0.0;
    for (std::size_t i = 0; i < chi.nodes(); ++i) sum += chi.at(i)[0];
    out[0] = a * sum / static_cast<double>(chi.nodes()) + b * phi.newest()[0];
  };
  spec.sigma1 = [=](const SegmentView& chi, std::span<double> out) {
    out[0] = s1 * std::tanh(chi.oldest()[0]);
  };
  return spec;
}

}  // namespace

SystemRegistry& SystemRegistry::global() {
  static SystemRegistry registry = [] {
    SystemRegistry r;
    r.add("relaxation", make_relaxation);
    r.add("superlinear_drift", make_superlinear);
    r.add("window_mean", make_window_mean);
    return r;
  }();
  return registry;
}

void SystemRegistry::add(const std::string& name, Factory factory) {
  factories_[name] = std::move(factory);
}

bool SystemRegistry::contains(const std::string& name) const { return factories_.contains(name); }

SystemSpec SystemRegistry::make(const std::string& name, const nlohmann::json& params,
                                double tau) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw ConfigError("no registered system named '" + name + "'");
  return it->second(params, tau);
}

std::vector<std::string> SystemRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : factories_) out.push_back(name);
  return out;
}

// ---------------------------------------------------------------------------
// Dissipativity

namespace {

void require_finite(std::span<const double> v, const char* what, std::size_t sample) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      std::ostringstream os;
      os << what << " returned a non-finite value on sample " << sample;
      throw DataError(os.str());
    }
  }
}

double squared(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Per-sample terms of the dissipativity inequality: Q, |dx|^2, |dy|^2.
struct DissipativityTerms {
  double q, dx2, dy2;
};

std::vector<DissipativityTerms> dissipativity_terms(const SystemSpec& spec,
                                                    std::span<const DissipativitySample> samples) {
  std::vector<DissipativityTerms> terms;
  terms.reserve(samples.size());
  std::vector<double> b(spec.n), bp(spec.n), s(spec.n * spec.m), sp(spec.n * spec.m);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& smp = samples[i];
    if (smp.x.size() != spec.n || smp.x_prime.size() != spec.n || smp.y.size() != spec.n ||
        smp.y_prime.size() != spec.n || smp.chi.dim() != spec.n) {
      throw UsageError("dissipativity sample has the wrong dimension");
    }
    spec.b2(smp.chi, smp.x, smp.y, b);
    spec.b2(smp.chi, smp.x_prime, smp.y_prime, bp);
    spec.sigma2(smp.chi, smp.x, smp.y, s);
    spec.sigma2(smp.chi, smp.x_prime, smp.y_prime, sp);
    require_finite(b, "b2", i);
    require_finite(bp, "b2", i);
    require_finite(s, "sigma2", i);
    require_finite(sp, "sigma2", i);
    double inner = 0.0;
    for (std::size_t c = 0; c < spec.n; ++c) inner += (smp.x[c] - smp.x_prime[c]) * (b[c] - bp[c]);
    terms.push_back({2.0 * inner + squared(s, sp), squared(smp.x, smp.x_prime),
                     squared(smp.y, smp.y_prime)});
  }
  return terms;
}

double worst_violation(std::span<const DissipativityTerms> terms, double l1, double l2) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& t : terms) worst = std::max(worst, t.q + l1 * t.dx2 - l2 * t.dy2);
  return worst;
}

struct PairScore {
  double l1 = 0.0, l2 = 0.0, worst = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

bool better(const PairScore& a, const PairScore& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (a.feasible) return (a.l1 - a.l2) > (b.l1 - b.l2);
  return a.worst < b.worst;
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return g;
}

PairScore search(std::span<const DissipativityTerms> terms, const std::vector<double>& g1,
                 const std::vector<double>& g2) {
  PairScore best;
  for (double l1 : g1) {
    for (double l2 : g2) {
      if (!(l1 > l2)) continue;
      PairScore s{l1, l2, worst_violation(terms, l1, l2), false};
      s.feasible = s.worst <= kDissipativityTolerance;
      if (better(s, best)) best = s;
    }
  }
  return best;
}

}  // namespace

DissipativityReport check_dissipativity(const SystemSpec& spec,
                                        std::span<const DissipativitySample> samples,
                                        std::optional<std::pair<double, double>> candidate) {
  if (samples.empty()) throw UsageError("check_dissipativity needs at least one sample");
  const auto terms = dissipativity_terms(spec, samples);
  DissipativityReport report;
  report.sample_count = samples.size();

  if (candidate) {
    report.lambda1 = candidate->first;
    report.lambda2 = candidate->second;
    report.worst_violation = worst_violation(terms, report.lambda1, report.lambda2);
  } else {
    PairScore best = search(terms, log_grid(1e-4, 1e4, 81), log_grid(1e-4, 1e4, 81));
    double span = std::pow(1e8, 1.0 / 80.0);  // one coarse cell
    for (int pass = 0; pass < 2; ++pass) {
      const auto g1 = log_grid(best.l1 / span, best.l1 * span, 41);
      const auto g2 = log_grid(best.l2 / span, best.l2 * span, 41);
      const PairScore refined = search(terms, g1, g2);
      if (!better(best, refined)) best = refined;
      span = std::pow(span, 2.0 / 40.0);
    }
    report.lambda1 = best.l1;
    report.lambda2 = best.l2;
    report.worst_violation = best.worst;
  }
  report.pass = report.worst_violation <= kDissipativityTolerance &&
                report.lambda1 > report.lambda2 && report.lambda2 > 0.0;
  return report;
}

DissipativityReport check_dissipativity(const SystemSpec& spec, const DissipativitySampler& sampler,
                                        std::size_t trials,
                                        std::optional<std::pair<double, double>> candidate) {
  if (trials == 0) throw UsageError("check_dissipativity needs trials >= 1");
  std::vector<DissipativitySample> samples;
  samples.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) samples.push_back(sampler(i));
  return check_dissipativity(spec, samples, candidate);
}

DissipativitySampler box_dissipativity_sampler(const SystemSpec& spec, double h, double radius,
                                               std::uint64_t seed) {
  const std::size_t n = spec.n;
  const double tau = spec.tau;
  const std::size_t nodes = grid_intervals(tau, h) + 1;
  return [=](std::size_t index) {
    const NoiseStream u(seed, StreamId{index, Driver::Aux, 0}, 1);
    std::uint64_t k = 0;
    auto draw = [&] { return radius * (2.0 * u.uniform(k++) - 1.0); };
    std::vector<double> chi(nodes * n);
    for (double& v : chi) v = draw();
    DissipativitySample s{Segment(tau, h, n, std::move(chi)), {}, {}, {}, {}};
    for (auto* v : {&s.x, &s.x_prime, &s.y, &s.y_prime}) {
      v->resize(n);
      for (double& c : *v) c = draw();
    }
    return s;
  };
}

// ---------------------------------------------------------------------------
// Growth / Lipschitz

SegmentPairSampler growing_segment_sampler(std::size_t n, double tau, double h, double min_amplitude,
                                           double max_amplitude, std::size_t trials,
                                           std::uint64_t seed) {
  if (!(min_amplitude > 0.0) || !(max_amplitude >= min_amplitude)) {
    throw UsageError("growing_segment_sampler needs 0 < min_amplitude <= max_amplitude");
  }
  const std::size_t nodes = grid_intervals(tau, h) + 1;
  return [=](std::size_t index) {
    const double frac = trials > 1 ? static_cast<double>(index) / static_cast<double>(trials - 1) : 1.0;
    const double amplitude = min_amplitude * std::pow(max_amplitude / min_amplitude, frac);
    const NoiseStream u(seed, StreamId{index, Driver::Aux, 1}, 1);
    std::uint64_t k = 0;
    auto make = [&] {
      std::vector<double> v(nodes * n);
      for (double& c : v) c = 2.0 * u.uniform(k++) - 1.0;
      Segment raw(tau, h, n, v);
      const double norm = raw.sup_norm();
      for (double& c : v) c *= amplitude / norm;
      return Segment(tau, h, n, std::move(v));
    };
    Segment chi = make();
    Segment phi = make();
    return std::pair{std::move(chi), std::move(phi)};
  };
}

GrowthReport check_growth_and_lipschitz(const SystemSpec& spec, const SegmentPairSampler& sampler,
                                        std::size_t trials) {
  if (trials == 0) throw UsageError("check_growth_and_lipschitz needs trials >= 1");
  std::vector<double> growth(trials, 0.0), lipschitz(trials, 0.0);
  std::vector<GrowthWitness> witnesses(trials);
  std::vector<double> b(spec.n), s_chi(spec.n * spec.m), s_phi(spec.n * spec.m);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto [chi, phi] = sampler(i);
    spec.b1(chi, phi, b);
    spec.sigma1(chi, s_chi);
    spec.sigma1(phi, s_phi);
    require_finite(b, "b1", i);
    require_finite(s_chi, "sigma1", i);
    require_finite(s_phi, "sigma1", i);
    double bn = 0.0;
    for (double v : b) bn += v * v;
    const double chi_norm = chi.sup_norm();
    growth[i] = std::sqrt(bn) / (1.0 + chi_norm);
    const double dist = sup_distance(chi, phi);
    if (dist > 0.0) lipschitz[i] = std::sqrt(squared(s_chi, s_phi)) / dist;
    witnesses[i] = {chi_norm, phi.sup_norm(), std::max(growth[i], lipschitz[i])};
  }

  auto stable_max = [&](const std::vector<double>& r, double& overall) {
    const std::size_t head = std::max<std::size_t>(1, (3 * trials) / 4);
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
      double& slot = i < head ? early : late;
      slot = std::max(slot, r[i]);
    }
    overall = std::max(early, late);
    return std::isfinite(overall) && late <= 2.0 * early + 1e-12;
  };

  GrowthReport report;
  const bool growth_ok = stable_max(growth, report.growth_estimate);
  const bool lipschitz_ok = stable_max(lipschitz, report.lipschitz_estimate);
  report.L_estimate = std::max(report.growth_estimate, report.lipschitz_estimate);
  report.pass = growth_ok && lipschitz_ok;

  // Keep the five strongest witnesses for diagnostics.
  std::vector<std::size_t> order(trials);
  for (std::size_t i = 0; i < trials; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return witnesses[a].ratio > witnesses[c].ratio; });
  for (std::size_t i = 0; i < std::min<std::size_t>(5, trials); ++i) {
    report.max_ratio_points.push_back(witnesses[order[i]]);
  }
  return report;
}

bool check_initial_segment(const SegmentView& seg, double lambda3_cap) {
  return seg.lipschitz_modulus() <= lambda3_cap;
}

}  // namespace twoscale
