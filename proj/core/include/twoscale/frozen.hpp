#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twoscale/noise.hpp"
#include "twoscale/segment.hpp"
#include "twoscale/solver.hpp"
#include "twoscale/systems.hpp"

namespace twoscale {

/// Fast equation with the slow segment held at zeta:
///   dY = b2(zeta, Y(t), Y(t - tau)) dt + sigma2(zeta, Y(t), Y(t - tau)) dW2.
/// The returned spec keeps its own copy of zeta.
SddeSpec frozen_equation(const SystemSpec& spec, const Segment& zeta);

TrajectoryBundle simulate_frozen(const SystemSpec& spec, const Segment& zeta, const Segment& eta,
                                 const TimeGrid& grid, NoiseStream w2,
                                 const SolverOptions& options = {});

/// Budget of one averaged-drift estimate.
struct EstimatorConfig {
  double burn_in = 10.0;
  double horizon = 50.0;
  double step = 1e-3;
  std::size_t replicas = 16;
  std::uint64_t seed = 0;
  /// Replica r draws from StreamId{stream_path, Driver::Aux, first_sub + r}.
  std::uint64_t stream_path = 0;
  std::uint32_t first_sub = 0;
  /// Initial fast segment; zero when empty.
  std::optional<Segment> eta;
  std::size_t threads = 1;
  SolverOptions solver;
};

struct AveragedDriftEstimate {
  Segment zeta;
  std::vector<double> value;
  std::vector<double> std_error;
  double burn_in = 0.0;
  double horizon = 0.0;
  std::size_t replicas = 0;
  std::vector<std::string> warnings;
};

/// Time average of b1(zeta, Y_t) over [burn_in, burn_in + horizon] along
/// each replica of the frozen equation; value is the replica mean and
/// std_error the replica standard deviation over sqrt(replicas).
AveragedDriftEstimate estimate_averaged_drift(const SystemSpec& spec, const Segment& zeta,
                                              const EstimatorConfig& config);

struct DecayFit {
  std::vector<double> times;
  std::vector<double> log_gaps;
  double fitted_rate = 0.0;
  double rate_std_error = 0.0;  // regression standard error of the slope
  double r_squared = 0.0;
};

struct MixingConfig {
  /// Checkpoints are tau, 2 tau, ..., up to the grid horizon.
  std::size_t replicas = 8;
  std::uint64_t seed = 0;
  std::uint64_t stream_path = 0;
  std::size_t threads = 1;
  SolverOptions solver;
};

/// Gaps below this are treated as numerically zero.
inline constexpr double kDecayFloor = 1e-12;

/// Synchronously coupled frozen runs from eta and eta_prime (same W2 per
/// replica). g(t) = replica mean of ||Y_t(eta) - Y_t(eta')||_inf^2 at
/// t = tau, 2 tau, ...; log g is fitted linearly over the leading checkpoints
/// with g > kDecayFloor and fitted_rate = -slope. Throws DegenerateFitError
/// when fewer than three checkpoints stay above the floor.
DecayFit mixing_decay(const SystemSpec& spec, const Segment& zeta, const Segment& eta,
                      const Segment& eta_prime, const TimeGrid& grid, const MixingConfig& config);

/// Largest sample size accepted by wasserstein2_truncated.
inline constexpr std::size_t kMaxExactAssignment = 256;

/// Optimal assignment on a square cost matrix (row-major). Returns the
/// minimal total cost and, for each row, the assigned column.
std::pair<double, std::vector<std::size_t>> solve_assignment(std::span<const double> cost,
                                                             std::size_t size);

/// Empirical L2-Wasserstein distance between two equally sized segment samples
/// under the bounded metric rho = min(1, ||a - b||_inf), solved exactly.
double wasserstein2_truncated(std::span<const Segment> sample_a, std::span<const Segment> sample_b);

struct LipschitzProbe {
  double max_ratio = 0.0;
  std::vector<double> ratios;
  /// Propagated standard error of each ratio.
  std::vector<double> ratio_std_errors;
};

/// max |bbar(zeta) - bbar(zeta')| / ||zeta - zeta'||_inf over the pairs,
/// each bbar from estimate_averaged_drift with `config`.
LipschitzProbe lipschitz_probe_bbar(const SystemSpec& spec,
                                    std::span<const std::pair<Segment, Segment>> zeta_pairs,
                                    const EstimatorConfig& config);

}  // namespace twoscale
