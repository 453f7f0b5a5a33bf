#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "twoscale/frozen.hpp"
#include "twoscale/noise.hpp"
#include "twoscale/segment.hpp"
#include "twoscale/solver.hpp"
#include "twoscale/systems.hpp"

namespace twoscale {

/// Block length for the Khasminskii discretization.
struct DeltaSchedule {
  double epsilon = 0.0;
  double delta_raw = 0.0;        // eps * sqrt(-ln eps)
  double delta = 0.0;            // tau / blocks_per_tau, never above delta_raw
  std::size_t blocks_per_tau = 0;
};

/// Requires 0 < eps < 1/e so that eps / delta_raw = (-ln eps)^{-1/2} < 1.
DeltaSchedule khasminskii_delta(double epsilon, double tau);

/// floor(t / delta) * delta, guaranteed to satisfy result <= t < result + delta.
double breakpoint(double t, double delta);

struct AuxiliaryPaths {
  TrajectoryBundle coupled;    // (X^eps, Y^eps)
  TrajectoryBundle auxiliary;  // (X~^eps, Y~^eps)
  std::size_t block_steps = 0;
};

/// Simulates (X, Y) and then the auxiliary pair in which every coefficient
/// sees the slow segment frozen at the last breakpoint, X_{t_delta}, and Y~
/// restarts from Y at each breakpoint. X~ reuses the W1 increments of X and
/// Y~ the W2 increments of Y. delta must be a multiple of the grid step.
AuxiliaryPaths simulate_auxiliary(const SystemSpec& spec, const Segment& xi, const Segment& eta,
                                  double epsilon, double delta, const TimeGrid& grid,
                                  const NoiseStream& w1, const NoiseStream& w2,
                                  const SolverOptions& options = {});

/// Averaged drift evaluated on a slow segment.
using DriftSource = std::function<void(const SegmentView& zeta, std::span<double> out)>;

/// bbar(zeta) = kappa zeta(0) for the linear benchmark.
DriftSource closed_form_drift(const LinearBenchmarkParams& params);

/// bbar backed by estimate_averaged_drift. With memoization on, segments are
/// keyed by their values rounded to `quantum` and each key is estimated once;
/// the replica streams are derived from the key, so a value never depends on
/// evaluation order. Not thread-safe; give each worker its own copy.
class EstimatedDrift {
 public:
  EstimatedDrift(SystemSpec spec, EstimatorConfig config, bool memoize = true, double quantum = 1e-4);

  void operator()(const SegmentView& zeta, std::span<double> out);

  std::size_t evaluations() const noexcept { return evaluations_; }
  std::size_t cache_hits() const noexcept { return hits_; }
  /// Largest std_error coordinate seen so far.
  double max_std_error() const noexcept { return max_std_error_; }

 private:
  struct Entry {
    std::vector<double> value;
  };

  SystemSpec spec_;
  EstimatorConfig config_;
  bool memoize_;
  double quantum_;
  std::unordered_map<std::uint64_t, Entry> cache_;
  std::size_t evaluations_ = 0;
  std::size_t hits_ = 0;
  double max_std_error_ = 0.0;
};

/// dXbar = bbar(Xbar_t) dt + sigma1(Xbar_t) dW1 on the shared kernel. Pass
/// the same W1 stream as the coupled run it is compared against.
TrajectoryBundle simulate_averaged(const SystemSpec& spec, const Segment& xi, DriftSource drift,
                                   const TimeGrid& grid, NoiseStream w1,
                                   const SolverOptions& options = {});

}  // namespace twoscale
