#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "twoscale/solver.hpp"

namespace twoscale {

enum class PathComponent {
  Slow,         // |a.slow(t) - b.slow(t)|
  Fast,         // |a.fast(t) - b.fast(t)|
  SlowSegment,  // ||a.slow_t - b.slow_t||_inf
  FastSegment,  // ||a.fast_t - b.fast_t||_inf
};

/// Max over grid times t in [t0, t1] of the chosen distance between two
/// bundles on the same grid. Throws UsageError on grid mismatch or a window
/// outside [0, T].
double sup_distance(const TrajectoryBundle& a, const TrajectoryBundle& b, double t0, double t1,
                    PathComponent component = PathComponent::Slow);

struct MomentEstimate {
  double p = 1.0;
  double value = 0.0;
  double std_error = 0.0;
  std::size_t paths = 0;
};

/// Monte Carlo mean of s^p with its standard error stdev(s^p) / sqrt(count).
MomentEstimate p_moment(std::span<const double> samples, double p);

/// Average over bundles and sample times of ||X_t - X_{t_delta}||_inf^p for
/// the slow segment. delta must be a multiple of the grid step.
double segment_displacement_moment(std::span<const TrajectoryBundle> bundles, double delta, double p,
                                   std::span<const double> sample_times);
double segment_displacement_moment(const TrajectoryBundle& bundle, double delta, double p,
                                   std::span<const double> sample_times);

/// Same quantity per bundle (averaged over sample times), for error bars.
std::vector<double> segment_displacement_per_path(std::span<const TrajectoryBundle> bundles,
                                                  double delta, double p,
                                                  std::span<const double> sample_times);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double slope_std_error = 0.0;  // 0 with only two points
};

/// Ordinary least squares y = intercept + slope x.
LineFit linear_fit(std::span<const double> xs, std::span<const double> ys);

struct SlopeFit {
  std::vector<double> xs;
  std::vector<double> ys;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least squares on (ln x, ln y). Needs at least three positive points;
/// points are stored sorted by x.
SlopeFit slope_fit(std::span<const double> xs, std::span<const double> ys);

}  // namespace twoscale
