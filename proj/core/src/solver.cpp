#include "twoscale/solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "twoscale/errors.hpp"
#include "twoscale/history.hpp"

namespace twoscale {

namespace {

// Increments are drawn in chunks to amortize the per-call overhead.
constexpr std::size_t kChunkSteps = 512;

class IncrementBuffer {
 public:
  IncrementBuffer(NoiseStream& stream, double dt, double epsilon, std::size_t total_steps)
      : stream_(stream), dt_(dt), epsilon_(epsilon), remaining_(total_steps) {}

  std::span<const double> next() {
    const std::size_t m = stream_.dim();
    if (cursor_ == filled_) {
      const std::size_t chunk = std::min(kChunkSteps, remaining_);
      buffer_.resize(chunk * m);
      stream_.fast_increments(buffer_, dt_, epsilon_);
      remaining_ -= chunk;
      filled_ = chunk;
      cursor_ = 0;
    }
    return std::span<const double>(buffer_).subspan(cursor_++ * m, m);
  }

 private:
  NoiseStream& stream_;
  double dt_;
  double epsilon_;
  std::size_t remaining_;
  std::size_t filled_ = 0;
  std::size_t cursor_ = 0;
  std::vector<double> buffer_;
};

}  // namespace

TimeGrid TimeGrid::make(double horizon, double step, double tau) {
  TimeGrid g;
  g.horizon = horizon;
  g.step = step;
  g.tau_steps = grid_intervals(tau, step);
  g.steps = grid_intervals(horizon, step);
  return g;
}

std::string_view to_string(PathLabel label) noexcept {
  switch (label) {
    case PathLabel::Coupled: return "coupled";
    case PathLabel::Auxiliary: return "auxiliary";
    case PathLabel::Averaged: return "averaged";
    case PathLabel::Frozen: return "frozen";
    case PathLabel::SingleScale: return "single_scale";
  }
  return "unknown";
}

namespace detail {

void check_state(std::span<const double> state, std::span<const double> previous, std::size_t step,
                 double threshold, const char* process) {
  for (double v : state) {
    if (!std::isfinite(v) || std::abs(v) > threshold) {
      std::ostringstream os;
      os << process << " diverged at step " << step
         << " (the step may exceed the stability cap, or the system is not dissipative)";
      throw DivergenceError(os.str(), step, std::vector<double>(previous.begin(), previous.end()));
    }
  }
}

void require_compatible(const SegmentView& seg, const TimeGrid& grid, std::size_t dim,
                        const char* what) {
  if (seg.dim() != dim || seg.intervals() != grid.tau_steps ||
      std::abs(seg.step() - grid.step) > 1e-12 * grid.step) {
    std::ostringstream os;
    os << what << " segment (n=" << seg.dim() << ", M=" << seg.intervals() << ", h=" << seg.step()
       << ") does not match the grid (n=" << dim << ", M=" << grid.tau_steps << ", h=" << grid.step
       << ")";
    throw UsageError(os.str());
  }
}

}  // namespace detail

void integrate_sdde(const SddeSpec& spec, const SegmentView& initial, const TimeGrid& grid,
                    NoiseStream& w, const StepObserver& observer, const SolverOptions& options) {
  detail::require_compatible(initial, grid, spec.n, "initial");
  if (w.dim() != spec.m) throw UsageError("noise dimension does not match the system");
  const std::size_t n = spec.n;
  const double h = grid.step;

  HistoryWindow window(initial);
  std::vector<double> drift(n), diffusion(n * spec.m), next(n);
  IncrementBuffer dw(w, h, 1.0, grid.steps);

  if (observer) observer(0, window.view());
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const SegmentView seg = window.view();
    spec.drift(seg, drift);
    spec.diffusion(seg, diffusion);
    const auto current = window.newest();
    for (std::size_t c = 0; c < n; ++c) next[c] = current[c] + drift[c] * h;
    detail::add_matvec(diffusion, dw.next(), next);
    detail::check_state(next, current, k + 1, options.divergence_threshold, "single-scale SDDE");
    window.push(next);
    if (observer) observer(k + 1, window.view());
  }
}

TrajectoryBundle simulate_sdde(const SddeSpec& spec, const Segment& initial, const TimeGrid& grid,
                               NoiseStream w, PathLabel label, const SolverOptions& options) {
  TrajectoryBundle out;
  out.grid = grid;
  out.dim = spec.n;
  out.label = label;
  out.slow.reserve(grid.nodes() * spec.n);
  out.slow.assign(initial.values().begin(), initial.values().end());
  integrate_sdde(spec, initial, grid, w,
                 [&](std::size_t step, const SegmentView& seg) {
                   if (step == 0) return;
                   const auto v = seg.newest();
                   out.slow.insert(out.slow.end(), v.begin(), v.end());
                 },
                 options);
  return out;
}

TrajectoryBundle simulate_coupled(const SystemSpec& spec, const Segment& xi, const Segment& eta,
                                  double epsilon, const TimeGrid& grid, NoiseStream w1,
                                  NoiseStream w2, const SolverOptions& options) {
  if (!(epsilon > 0.0) || epsilon > 1.0) throw DomainError("epsilon must lie in (0, 1]");
  if (grid.step > options.stability_cap * epsilon * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "step h=" << grid.step << " exceeds the stability cap " << options.stability_cap
       << " * epsilon = " << options.stability_cap * epsilon;
    throw UsageError(os.str());
  }
  detail::require_compatible(xi, grid, spec.n, "slow initial");
  detail::require_compatible(eta, grid, spec.n, "fast initial");
  if (w1.dim() != spec.m || w2.dim() != spec.m) {
    throw UsageError("noise dimension does not match the system");
  }

  const std::size_t n = spec.n;
  const std::size_t m = spec.m;
  const std::size_t lag = grid.tau_steps;
  const double h = grid.step;
  const double fast_h = h / epsilon;

  TrajectoryBundle out;
  out.grid = grid;
  out.dim = n;
  out.epsilon = epsilon;
  out.label = PathLabel::Coupled;
  out.slow.resize(grid.nodes() * n);
  out.fast.resize(grid.nodes() * n);
  std::copy(xi.values().begin(), xi.values().end(), out.slow.begin());
  std::copy(eta.values().begin(), eta.values().end(), out.fast.begin());

  IncrementBuffer dw1(w1, h, 1.0, grid.steps);
  IncrementBuffer dw2(w2, h, epsilon, grid.steps);
  std::vector<double> b1(n), s1(n * m), b2(n), s2(n * m);

  for (std::size_t k = 0; k < grid.steps; ++k) {
    const SegmentView xseg = out.slow_segment(k);
    const SegmentView yseg = out.fast_segment(k);
    const auto x = out.slow_at(k);
    const auto y = out.fast_at(k);
    const auto y_lag = yseg.oldest();

    spec.b1(xseg, yseg, b1);
    spec.sigma1(xseg, s1);
    spec.b2(xseg, y, y_lag, b2);
    spec.sigma2(xseg, y, y_lag, s2);

    std::span<double> x_next(out.slow.data() + (k + 1 + lag) * n, n);
    std::span<double> y_next(out.fast.data() + (k + 1 + lag) * n, n);
    for (std::size_t c = 0; c < n; ++c) {
      x_next[c] = x[c] + b1[c] * h;
      y_next[c] = y[c] + b2[c] * fast_h;
    }
    detail::add_matvec(s1, dw1.next(), x_next);
    detail::add_matvec(s2, dw2.next(), y_next);
    detail::check_state(x_next, x, k + 1, options.divergence_threshold, "slow component");
    detail::check_state(y_next, y, k + 1, options.divergence_threshold, "fast component");
  }
  return out;
}

}  // namespace twoscale
