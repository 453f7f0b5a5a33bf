#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "twoscale/noise.hpp"
#include "twoscale/segment.hpp"
#include "twoscale/systems.hpp"

namespace twoscale {

/// Uniform time grid on [0, T] whose step also divides the delay.
struct TimeGrid {
  double horizon = 0.0;
  double step = 0.0;
  std::size_t steps = 0;
  std::size_t tau_steps = 0;

  /// Throws DomainError unless h > 0 divides both T and tau.
  static TimeGrid make(double horizon, double step, double tau);

  double tau() const noexcept { return static_cast<double>(tau_steps) * step; }
  double time(std::size_t k) const noexcept { return static_cast<double>(k) * step; }
  /// Nodes stored per path: history plus the forward steps.
  std::size_t nodes() const noexcept { return steps + tau_steps + 1; }
};

enum class PathLabel {
  Coupled,      // (X^eps, Y^eps)
  Auxiliary,    // (X~^eps, Y~^eps)
  Averaged,     // X-bar
  Frozen,       // Y^zeta
  SingleScale,  // generic one-equation run
};

std::string_view to_string(PathLabel label) noexcept;

/// Sampled paths on the grid including their history on [-tau, 0]. Node i of
/// a path sits at time (i - tau_steps) * h.
struct TrajectoryBundle {
  TimeGrid grid;
  std::size_t dim = 1;
  double epsilon = 1.0;
  PathLabel label = PathLabel::SingleScale;
  std::vector<double> slow;
  std::vector<double> fast;  // empty for single-equation runs

  bool has_fast() const noexcept { return !fast.empty(); }

  /// Value at forward step k (time k h); k in [0, steps].
  std::span<const double> slow_at(std::size_t k) const noexcept { return node(slow, k); }
  std::span<const double> fast_at(std::size_t k) const noexcept { return node(fast, k); }
  /// Segment at forward step k, i.e. the window [t_k - tau, t_k].
  SegmentView slow_segment(std::size_t k) const noexcept { return window(slow, k); }
  SegmentView fast_segment(std::size_t k) const noexcept { return window(fast, k); }

 private:
  std::span<const double> node(const std::vector<double>& path, std::size_t k) const noexcept {
    return std::span<const double>(path).subspan((k + grid.tau_steps) * dim, dim);
  }
  SegmentView window(const std::vector<double>& path, std::size_t k) const noexcept {
    return {grid.tau(), grid.step, dim,
            std::span<const double>(path).subspan(k * dim, (grid.tau_steps + 1) * dim)};
  }
};

struct SolverOptions {
  /// The fast scale needs h <= stability_cap * epsilon.
  double stability_cap = 0.1;
  /// Any coordinate beyond this magnitude counts as divergence.
  double divergence_threshold = 1e12;
};

/// One functional SDE dZ = f(Z_t) dt + g(Z_t) dW on the shared grid.
struct SddeSpec {
  std::size_t n = 1;
  std::size_t m = 1;
  double tau = 1.0;
  std::function<void(const SegmentView& seg, std::span<double> out)> drift;
  std::function<void(const SegmentView& seg, std::span<double> out)> diffusion;  // n x m
};

/// Called after every step with the new step index and the current segment.
using StepObserver = std::function<void(std::size_t step, const SegmentView& segment)>;

/// Euler-Maruyama kernel shared by the single-equation runs. Does not store
/// the path; `observer` sees every step (and step 0 before integrating).
void integrate_sdde(const SddeSpec& spec, const SegmentView& initial, const TimeGrid& grid,
                    NoiseStream& w, const StepObserver& observer,
                    const SolverOptions& options = {});

TrajectoryBundle simulate_sdde(const SddeSpec& spec, const Segment& initial, const TimeGrid& grid,
                               NoiseStream w, PathLabel label = PathLabel::SingleScale,
                               const SolverOptions& options = {});

/// Explicit Euler-Maruyama for the slow/fast pair
///   X_{k+1} = X_k + b1(X_k., Y_k.) h + sigma1(X_k.) dW1_k
///   Y_{k+1} = Y_k + b2(X_k., Y_k, Y(t_k - tau)) h / eps + sigma2(...) dW2_k / sqrt(eps)
/// where X_k. is the segment at step k.
TrajectoryBundle simulate_coupled(const SystemSpec& spec, const Segment& xi, const Segment& eta,
                                  double epsilon, const TimeGrid& grid, NoiseStream w1,
                                  NoiseStream w2, const SolverOptions& options = {});

namespace detail {

/// Throws DivergenceError if any coordinate of `state` is non-finite or above
/// the threshold.
void check_state(std::span<const double> state, std::span<const double> previous, std::size_t step,
                 double threshold, const char* process);

void require_compatible(const SegmentView& seg, const TimeGrid& grid, std::size_t dim,
                        const char* what);

/// out += A v for row-major A (n x m).
inline void add_matvec(std::span<const double> a, std::span<const double> v, std::span<double> out,
                       double scale = 1.0) noexcept {
  const std::size_t m = v.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += a[r * m + c] * v[c];
    out[r] += scale * s;
  }
}

}  // namespace detail

}  // namespace twoscale
