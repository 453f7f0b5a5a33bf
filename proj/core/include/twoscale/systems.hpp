#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "twoscale/segment.hpp"

namespace twoscale {

/// Slow drift b1(chi, phi) -> R^n.
using SlowDrift = std::function<void(const SegmentView& chi, const SegmentView& phi, std::span<double> out)>;
/// Slow diffusion sigma1(chi) -> n x m, row-major. It never sees the fast state.
using SlowDiffusion = std::function<void(const SegmentView& chi, std::span<double> out)>;
/// Fast drift b2(chi, x, y) -> R^n where x = Y(t), y = Y(t - tau).
using FastDrift = std::function<void(const SegmentView& chi, std::span<const double> x,
                                     std::span<const double> y, std::span<double> out)>;
/// Fast diffusion sigma2(chi, x, y) -> n x m, row-major.
using FastDiffusion = std::function<void(const SegmentView& chi, std::span<const double> x,
                                         std::span<const double> y, std::span<double> out)>;

/// Coefficients of the slow/fast pair. Maps must be pure.
struct SystemSpec {
  std::string name;
  std::size_t n = 1;
  std::size_t m = 1;
  double tau = 1.0;
  SlowDrift b1;
  SlowDiffusion sigma1;
  FastDrift b2;
  FastDiffusion sigma2;
};

/// Scalar benchmark
///   b1(chi, phi) = a11 chi(0) + a12 phi(0),   sigma1 = s1,
///   b2(chi, x, y) = c1 chi(0) - c2 x + c3 y,  sigma2 = s2.
struct LinearBenchmarkParams {
  double a11 = -1.0;
  double a12 = 1.0;
  double s1 = 0.0;
  double c1 = 1.0;
  double c2 = 2.0;
  double c3 = 0.5;
  double s2 = 0.0;

  /// c2 > c3 > 0, the regime in which (2 c2 - c3, c3) is a dissipativity pair.
  bool dissipative() const noexcept { return c2 > c3 && c3 > 0.0; }
  /// Stationary mean of the frozen fast equation, c1 zeta(0) / (c2 - c3).
  double frozen_mean(double zeta0) const;
  /// kappa = a11 + a12 c1 / (c2 - c3); the averaged drift is kappa zeta(0).
  double averaged_rate() const;
  double averaged_drift(double zeta0) const { return averaged_rate() * zeta0; }
};

void to_json(nlohmann::json& j, const LinearBenchmarkParams& p);
void from_json(const nlohmann::json& j, LinearBenchmarkParams& p);

SystemSpec linear_benchmark(const LinearBenchmarkParams& params, double tau);

/// Named factories for user-supplied systems referenced from scenario configs.
class SystemRegistry {
 public:
  using Factory = std::function<SystemSpec(const nlohmann::json& params, double tau)>;

  /// Registry pre-populated with the built-in systems.
  static SystemRegistry& global();

  void add(const std::string& name, Factory factory);
  bool contains(const std::string& name) const;
  SystemSpec make(const std::string& name, const nlohmann::json& params, double tau) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Factory> factories_;
};

// ---------------------------------------------------------------------------
// Assumption checks

struct DissipativitySample {
  Segment chi;
  std::vector<double> x, x_prime, y, y_prime;
};

struct DissipativityReport {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double worst_violation = 0.0;
  std::size_t sample_count = 0;
  bool pass = false;
};

using DissipativitySampler = std::function<DissipativitySample(std::size_t index)>;

/// Random (chi, x, x', y, y') with coordinates uniform in [-radius, radius].
DissipativitySampler box_dissipativity_sampler(const SystemSpec& spec, double h, double radius,
                                               std::uint64_t seed);

/// Violation tolerance used for verdicts.
inline constexpr double kDissipativityTolerance = 1e-9;

/// Tests 2<dx, db2> + ||dsigma2||_F^2 <= -l1 |dx|^2 + l2 |dy|^2 on every
/// sample. With a candidate the pair is checked as given. Without one, a
/// log-spaced (l1, l2) grid is searched and refined twice; among feasible
/// pairs the widest margin l1 - l2 is reported, otherwise the pair with the
/// smallest worst violation.
DissipativityReport check_dissipativity(const SystemSpec& spec,
                                        std::span<const DissipativitySample> samples,
                                        std::optional<std::pair<double, double>> candidate = {});
DissipativityReport check_dissipativity(const SystemSpec& spec, const DissipativitySampler& sampler,
                                        std::size_t trials,
                                        std::optional<std::pair<double, double>> candidate = {});

struct GrowthWitness {
  double chi_norm = 0.0;
  double phi_norm = 0.0;
  double ratio = 0.0;
};

struct GrowthReport {
  double L_estimate = 0.0;
  double growth_estimate = 0.0;     // max |b1(chi, phi)| / (1 + ||chi||)
  double lipschitz_estimate = 0.0;  // max ||sigma1(phi) - sigma1(chi)||_F / ||phi - chi||
  std::vector<GrowthWitness> max_ratio_points;
  bool pass = false;
};

using SegmentPairSampler = std::function<std::pair<Segment, Segment>(std::size_t index)>;

/// Pairs whose sup norms both equal an amplitude growing log-uniformly from
/// `min_amplitude` to `max_amplitude` across the `trials` indices.
SegmentPairSampler growing_segment_sampler(std::size_t n, double tau, double h, double min_amplitude,
                                           double max_amplitude, std::size_t trials,
                                           std::uint64_t seed);

/// Estimates the growth and Lipschitz constants of the slow coefficients. Passes iff both maxima are finite and
/// stable: the maximum over the last quarter of samples is at most twice the
/// maximum over the first three quarters.
GrowthReport check_growth_and_lipschitz(const SystemSpec& spec, const SegmentPairSampler& sampler,
                                        std::size_t trials);

/// Lipschitz bound on the initial slow segment.
bool check_initial_segment(const SegmentView& seg, double lambda3_cap);

}  // namespace twoscale
