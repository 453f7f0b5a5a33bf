#include "twoscale/frozen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "twoscale/errors.hpp"
#include "twoscale/metrics.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale {

SddeSpec frozen_equation(const SystemSpec& spec, const Segment& zeta) {
  if (zeta.dim() != spec.n) throw UsageError("frozen segment dimension does not match the system");
  SddeSpec out;
  out.n = spec.n;
  out.m = spec.m;
  out.tau = spec.tau;
  out.drift = [b2 = spec.b2, zeta](const SegmentView& seg, std::span<double> o) {
    b2(zeta, seg.newest(), seg.oldest(), o);
  };
  out.diffusion = [sigma2 = spec.sigma2, zeta](const SegmentView& seg, std::span<double> o) {
    sigma2(zeta, seg.newest(), seg.oldest(), o);
  };
  return out;
}

TrajectoryBundle simulate_frozen(const SystemSpec& spec, const Segment& zeta, const Segment& eta,
                                 const TimeGrid& grid, NoiseStream w2, const SolverOptions& options) {
  return simulate_sdde(frozen_equation(spec, zeta), eta, grid, std::move(w2), PathLabel::Frozen,
                       options);
}

namespace {

std::size_t steps_for(double duration, double step, const char* what) {
  if (duration == 0.0) return 0;
  try {
    return grid_intervals(duration, step);
  } catch (const DomainError&) {
    std::ostringstream os;
    os << what << "=" << duration << " is not a multiple of the estimator step " << step;
    throw UsageError(os.str());
  }
}

}  // namespace

AveragedDriftEstimate estimate_averaged_drift(const SystemSpec& spec, const Segment& zeta,
                                              const EstimatorConfig& config) {
  if (config.replicas == 0) throw UsageError("estimator needs replicas >= 1");
  if (!(config.horizon > 0.0)) throw UsageError("estimator horizon must be positive");
  if (config.burn_in < 0.0) throw UsageError("estimator burn-in must be non-negative");
  const std::size_t n = spec.n;
  const std::size_t burn_steps = steps_for(config.burn_in, config.step, "burn_in");
  const std::size_t avg_steps = steps_for(config.horizon, config.step, "horizon");

  TimeGrid grid;
  grid.step = config.step;
  grid.tau_steps = grid_intervals(spec.tau, config.step);
  grid.steps = burn_steps + avg_steps;
  grid.horizon = grid.time(grid.steps);

  const Segment zeta_grid = zeta.resample(config.step);
  const Segment eta = config.eta ? config.eta->resample(config.step)
                                 : Segment::zero(spec.tau, config.step, n);
  const SddeSpec frozen = frozen_equation(spec, zeta_grid);

  std::vector<std::vector<double>> replica_means(config.replicas, std::vector<double>(n, 0.0));
  try {
    parallel_for(config.replicas, config.threads, [&](std::size_t r) {
      NoiseStream w(config.seed,
                    StreamId{config.stream_path, Driver::Aux,
                             config.first_sub + static_cast<std::uint32_t>(r)},
                    spec.m);
      std::vector<double> b(n);
      auto& mean = replica_means[r];
      std::size_t count = 0;
      integrate_sdde(
          frozen, eta, grid, w,
          [&](std::size_t k, const SegmentView& seg) {
            if (k < burn_steps || k >= burn_steps + avg_steps) return;
            spec.b1(zeta_grid, seg, b);
            ++count;
            // Running mean keeps constant integrands exact.
            for (std::size_t c = 0; c < n; ++c) mean[c] += (b[c] - mean[c]) / static_cast<double>(count);
          },
          config.solver);
    });
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) +
                              "; the frozen equation blew up, run check_dissipativity on this system",
                          e.step(), e.last_state());
  }

  AveragedDriftEstimate est{zeta, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                            config.burn_in, config.horizon, config.replicas, {}};
  for (std::size_t c = 0; c < n; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < config.replicas; ++r) {
      mean += (replica_means[r][c] - mean) / static_cast<double>(r + 1);
    }
    double ss = 0.0;
    for (std::size_t r = 0; r < config.replicas; ++r) {
      ss += (replica_means[r][c] - mean) * (replica_means[r][c] - mean);
    }
    est.value[c] = mean;
    if (config.replicas > 1) {
      const double sd = std::sqrt(ss / static_cast<double>(config.replicas - 1));
      est.std_error[c] = sd / std::sqrt(static_cast<double>(config.replicas));
    }
  }
  if (config.burn_in < 5.0 * spec.tau) {
    std::ostringstream os;
    os << "burn_in=" << config.burn_in << " is below 5 tau=" << 5.0 * spec.tau
       << "; the estimate may carry start-up bias";
    est.warnings.push_back(os.str());
  }
  if (config.replicas == 1) est.warnings.push_back("single replica: std_error reported as 0");
  return est;
}

DecayFit mixing_decay(const SystemSpec& spec, const Segment& zeta, const Segment& eta,
                      const Segment& eta_prime, const TimeGrid& grid, const MixingConfig& config) {
  if (config.replicas == 0) throw UsageError("mixing_decay needs replicas >= 1");
  detail::require_compatible(eta, grid, spec.n, "eta");
  detail::require_compatible(eta_prime, grid, spec.n, "eta_prime");
  const std::size_t lag = grid.tau_steps;
  const std::size_t checkpoints = grid.steps / lag;
  if (checkpoints < 3) throw UsageError("mixing_decay needs a horizon of at least 3 tau");

  const SddeSpec frozen = frozen_equation(spec, zeta);
  std::vector<std::vector<double>> gaps(config.replicas, std::vector<double>(checkpoints, 0.0));

  parallel_for(config.replicas, config.threads, [&](std::size_t r) {
    const NoiseStream w(config.seed,
                        StreamId{config.stream_path, Driver::W2, static_cast<std::uint32_t>(r)}, spec.m);
    std::vector<std::vector<double>> snaps_a(checkpoints), snaps_b(checkpoints);
    auto recorder = [&](std::vector<std::vector<double>>& dst) {
      return [&dst, lag, checkpoints](std::size_t k, const SegmentView& seg) {
        if (k == 0 || k % lag != 0 || k / lag > checkpoints) return;
        dst[k / lag - 1].assign(seg.values().begin(), seg.values().end());
      };
    };
    NoiseStream wa = w;
    NoiseStream wb = w;
    integrate_sdde(frozen, eta, grid, wa, recorder(snaps_a), config.solver);
    integrate_sdde(frozen, eta_prime, grid, wb, recorder(snaps_b), config.solver);
    for (std::size_t j = 0; j < checkpoints; ++j) {
      const SegmentView a(grid.tau(), grid.step, spec.n, snaps_a[j]);
      const SegmentView b(grid.tau(), grid.step, spec.n, snaps_b[j]);
      const double d = sup_distance(a, b);
      gaps[r][j] = d * d;
    }
  });

  DecayFit fit;
  for (std::size_t j = 0; j < checkpoints; ++j) {
    double g = 0.0;
    for (std::size_t r = 0; r < config.replicas; ++r) g += gaps[r][j];
    g /= static_cast<double>(config.replicas);
    if (!(g > kDecayFloor)) break;
    fit.times.push_back(grid.time((j + 1) * lag));
    fit.log_gaps.push_back(std::log(g));
  }
  if (fit.times.size() < 3) {
    std::ostringstream os;
    os << "only " << fit.times.size()
       << " checkpoints above the gap floor; the coupled runs contract too fast (or start equal)";
    throw DegenerateFitError(os.str());
  }
  const LineFit line = linear_fit(fit.times, fit.log_gaps);
  fit.fitted_rate = -line.slope;
  fit.rate_std_error = line.slope_std_error;
  fit.r_squared = line.r_squared;
  return fit;
}

std::pair<double, std::vector<std::size_t>> solve_assignment(std::span<const double> cost,
                                                             std::size_t size) {
  if (cost.size() != size * size) throw UsageError("assignment cost matrix is not square");
  // Shortest augmenting path with row/column potentials (Kuhn-Munkres), 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size + 1, 0.0), v(size + 1, 0.0);
  std::vector<std::size_t> match(size + 1, 0), way(size + 1, 0);
  for (std::size_t i = 1; i <= size; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(size + 1, inf);
    std::vector<char> used(size + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= size; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * size + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= size; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(size);
  double total = 0.0;
  for (std::size_t j = 1; j <= size; ++j) row_to_col[match[j] - 1] = j - 1;
  for (std::size_t i = 0; i < size; ++i) total += cost[i * size + row_to_col[i]];
  return {total, row_to_col};
}

double wasserstein2_truncated(std::span<const Segment> sample_a, std::span<const Segment> sample_b) {
  const std::size_t n = sample_a.size();
  if (n != sample_b.size()) throw UsageError("wasserstein2_truncated: sample sizes differ");
  if (n == 0) throw UsageError("wasserstein2_truncated: empty samples");
  if (n > kMaxExactAssignment) {
    throw UsageError("wasserstein2_truncated: more than 256 segments; subsample first");
  }
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::min(1.0, sup_distance(sample_a[i], sample_b[j]));
      cost[i * n + j] = d * d;
    }
  }
  const double total = solve_assignment(cost, n).first;
  return std::sqrt(std::max(0.0, total) / static_cast<double>(n));
}

LipschitzProbe lipschitz_probe_bbar(const SystemSpec& spec,
                                    std::span<const std::pair<Segment, Segment>> zeta_pairs,
                                    const EstimatorConfig& config) {
  LipschitzProbe probe;
  for (const auto& [zeta, zeta_prime] : zeta_pairs) {
    const double dist = sup_distance(zeta, zeta_prime);
    if (dist == 0.0) throw UsageError("lipschitz_probe_bbar: pair members must differ");
    const auto a = estimate_averaged_drift(spec, zeta, config);
    const auto b = estimate_averaged_drift(spec, zeta_prime, config);
    double diff = 0.0, var = 0.0;
    for (std::size_t c = 0; c < spec.n; ++c) {
      diff += (a.value[c] - b.value[c]) * (a.value[c] - b.value[c]);
      var += a.std_error[c] * a.std_error[c] + b.std_error[c] * b.std_error[c];
    }
    probe.ratios.push_back(std::sqrt(diff) / dist);
    probe.ratio_std_errors.push_back(std::sqrt(var) / dist);
    probe.max_ratio = std::max(probe.max_ratio, probe.ratios.back());
  }
  return probe;
}

}  // namespace twoscale
