#include "twoscale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

std::size_t step_index(const TimeGrid& grid, double t, const char* what) {
  const double pos = t / grid.step;
  const double k = std::round(pos);
  if (t < -1e-12 || k > static_cast<double>(grid.steps) || std::abs(pos - k) > 1e-6) {
    std::ostringstream os;
    os << what << " t=" << t << " is not a grid time in [0, " << grid.horizon << "]";
    throw UsageError(os.str());
  }
  return static_cast<std::size_t>(k);
}

double point_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::size_t block_steps(const TimeGrid& grid, double delta) {
  const double ratio = delta / grid.step;
  const double r = std::round(ratio);
  if (!(delta > 0.0) || r < 1.0 || std::abs(ratio - r) > 1e-9 * r) {
    std::ostringstream os;
    os << "delta=" << delta << " is not a multiple of the grid step " << grid.step;
    throw UsageError(os.str());
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

double sup_distance(const TrajectoryBundle& a, const TrajectoryBundle& b, double t0, double t1,
                    PathComponent component) {
  if (a.grid.steps != b.grid.steps || a.grid.tau_steps != b.grid.tau_steps ||
      a.grid.step != b.grid.step || a.dim != b.dim) {
    throw UsageError("sup_distance: bundles live on different grids");
  }
  const bool fast = component == PathComponent::Fast || component == PathComponent::FastSegment;
  if (fast && (!a.has_fast() || !b.has_fast())) throw UsageError("sup_distance: no fast path stored");
  if (t1 < t0) throw UsageError("sup_distance: empty window");
  const std::size_t k0 = step_index(a.grid, t0, "window start");
  const std::size_t k1 = step_index(a.grid, t1, "window end");

  double best = 0.0;
  for (std::size_t k = k0; k <= k1; ++k) {
    double d = 0.0;
    switch (component) {
      case PathComponent::Slow: d = point_distance(a.slow_at(k), b.slow_at(k)); break;
      case PathComponent::Fast: d = point_distance(a.fast_at(k), b.fast_at(k)); break;
      case PathComponent::SlowSegment: d = sup_distance(a.slow_segment(k), b.slow_segment(k)); break;
      case PathComponent::FastSegment: d = sup_distance(a.fast_segment(k), b.fast_segment(k)); break;
    }
    best = std::max(best, d);
  }
  return best;
}

MomentEstimate p_moment(std::span<const double> samples, double p) {
  if (samples.size() < 2) throw UsageError("p_moment needs at least two samples");
  if (!(p > 0.0)) throw UsageError("p_moment needs p > 0");
  std::vector<double> powered(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i] < 0.0 || std::isnan(samples[i])) throw UsageError("p_moment: negative sample");
    powered[i] = p == 1.0 ? samples[i] : (p == 2.0 ? samples[i] * samples[i] : std::pow(samples[i], p));
  }
  const double count = static_cast<double>(powered.size());
  const double mean = std::accumulate(powered.begin(), powered.end(), 0.0) / count;
  double ss = 0.0;
  for (double v : powered) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (count - 1.0));
  return {p, mean, sd / std::sqrt(count), powered.size()};
}

std::vector<double> segment_displacement_per_path(std::span<const TrajectoryBundle> bundles,
                                                  double delta, double p,
                                                  std::span<const double> sample_times) {
  if (bundles.empty() || sample_times.empty()) {
    throw UsageError("segment_displacement: need bundles and sample times");
  }
  const TimeGrid& grid = bundles.front().grid;
  const std::size_t d = block_steps(grid, delta);
  std::vector<std::size_t> ks;
  for (double t : sample_times) {
    if (!(t > 0.0)) throw UsageError("segment_displacement: sample times must lie in (0, T]");
    ks.push_back(step_index(grid, t, "sample time"));
  }
  std::vector<double> out;
  out.reserve(bundles.size());
  for (const auto& b : bundles) {
    if (b.grid.steps != grid.steps || b.grid.step != grid.step) {
      throw UsageError("segment_displacement: bundles live on different grids");
    }
    double acc = 0.0;
    for (std::size_t k : ks) {
      const std::size_t kb = (k / d) * d;
      const double disp = kb == k ? 0.0 : sup_distance(b.slow_segment(k), b.slow_segment(kb));
      acc += std::pow(disp, p);
    }
    out.push_back(acc / static_cast<double>(ks.size()));
  }
  return out;
}

double segment_displacement_moment(std::span<const TrajectoryBundle> bundles, double delta, double p,
                                   std::span<const double> sample_times) {
  const auto per_path = segment_displacement_per_path(bundles, delta, p, sample_times);
  return std::accumulate(per_path.begin(), per_path.end(), 0.0) / static_cast<double>(per_path.size());
}

double segment_displacement_moment(const TrajectoryBundle& bundle, double delta, double p,
                                   std::span<const double> sample_times) {
  return segment_displacement_moment(std::span<const TrajectoryBundle>(&bundle, 1), delta, p,
                                     sample_times);
}

LineFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw UsageError("linear_fit needs matching inputs of size >= 2");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw UsageError("linear_fit: x values are all equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  // A constant response is fitted perfectly.
  fit.r_squared = syy == 0.0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  if (xs.size() > 2) {
    const double residual = std::max(0.0, syy - fit.slope * sxy);
    fit.slope_std_error = std::sqrt(residual / (n - 2.0) / sxx);
  }
  return fit;
}

SlopeFit slope_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 3) throw UsageError("slope_fit needs at least three points");
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  SlopeFit fit;
  std::vector<double> lx, ly;
  for (std::size_t i : order) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw UsageError("slope_fit: inputs must be positive");
    if (!fit.xs.empty() && xs[i] == fit.xs.back()) throw UsageError("slope_fit: repeated x value");
    fit.xs.push_back(xs[i]);
    fit.ys.push_back(ys[i]);
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  const LineFit line = linear_fit(lx, ly);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  fit.r_squared = line.r_squared;
  return fit;
}

}  // namespace twoscale
