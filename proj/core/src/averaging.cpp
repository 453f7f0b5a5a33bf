#include "twoscale/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "twoscale/errors.hpp"

namespace twoscale {

DeltaSchedule khasminskii_delta(double epsilon, double tau) {
  if (!(epsilon > 0.0)) throw DomainError("khasminskii_delta: epsilon must be positive");
  if (!(epsilon < std::exp(-1.0))) {
    std::ostringstream os;
    os << "khasminskii_delta: epsilon=" << epsilon
       << " must be below 1/e so that epsilon/delta = (-ln epsilon)^(-1/2) stays in (0, 1)";
    throw DomainError(os.str());
  }
  if (!(tau > 0.0)) throw DomainError("khasminskii_delta: tau must be positive");
  DeltaSchedule s;
  s.epsilon = epsilon;
  s.delta_raw = epsilon * std::sqrt(-std::log(epsilon));
  s.blocks_per_tau = static_cast<std::size_t>(std::ceil(tau / s.delta_raw));
  s.delta = tau / static_cast<double>(s.blocks_per_tau);
  // ceil() on a ratio that rounded down can leave delta a hair above delta_raw.
  while (s.delta > s.delta_raw) {
    ++s.blocks_per_tau;
    s.delta = tau / static_cast<double>(s.blocks_per_tau);
  }
  return s;
}

double breakpoint(double t, double delta) {
  if (t < 0.0 || !(delta > 0.0)) throw DomainError("breakpoint needs t >= 0 and delta > 0");
  double k = std::floor(t / delta);
  if ((k + 1.0) * delta <= t) k += 1.0;
  if (k * delta > t) k -= 1.0;
  return k * delta;
}

AuxiliaryPaths simulate_auxiliary(const SystemSpec& spec, const Segment& xi, const Segment& eta,
                                  double epsilon, double delta, const TimeGrid& grid,
                                  const NoiseStream& w1, const NoiseStream& w2,
                                  const SolverOptions& options) {
  const double ratio = delta / grid.step;
  const double rounded = std::round(ratio);
  if (!(delta > 0.0) || rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
    std::ostringstream os;
    os << "simulate_auxiliary: grid step " << grid.step << " does not divide delta=" << delta;
    throw UsageError(os.str());
  }
  const auto block = static_cast<std::size_t>(rounded);

  AuxiliaryPaths out;
  out.block_steps = block;
  out.coupled = simulate_coupled(spec, xi, eta, epsilon, grid, w1, w2, options);

  const std::size_t n = spec.n;
  const std::size_t m = spec.m;
  const std::size_t lag = grid.tau_steps;
  const double h = grid.step;
  const double fast_h = h / epsilon;
  const TrajectoryBundle& xy = out.coupled;

  TrajectoryBundle& aux = out.auxiliary;
  aux.grid = grid;
  aux.dim = n;
  aux.epsilon = epsilon;
  aux.label = PathLabel::Auxiliary;
  aux.slow.resize(grid.nodes() * n);
  aux.fast.resize(grid.nodes() * n);
  std::copy(xi.values().begin(), xi.values().end(), aux.slow.begin());
  std::copy(eta.values().begin(), eta.values().end(), aux.fast.begin());

  // Replaying copies of the streams yields exactly the increments used above.
  NoiseStream dw1_stream = w1;
  NoiseStream dw2_stream = w2;
  std::vector<double> dw1(m), dw2(m);
  std::vector<double> b1(n), s1(n * m), b2(n), s2(n * m);

  auto node = [&](std::vector<double>& path, std::size_t k) {
    return std::span<double>(path.data() + (k + lag) * n, n);
  };

  for (std::size_t k = 0; k <= grid.steps; ++k) {
    if (k % block == 0) {
      const auto y = xy.fast_at(k);
      std::copy(y.begin(), y.end(), node(aux.fast, k).begin());
    }
    if (k == grid.steps) break;

    const SegmentView frozen_slow = xy.slow_segment((k / block) * block);
    const SegmentView ytilde_seg = aux.fast_segment(k);
    const auto xt = aux.slow_at(k);
    const auto yt = aux.fast_at(k);
    const auto yt_lag = ytilde_seg.oldest();

    spec.b1(frozen_slow, ytilde_seg, b1);
    spec.sigma1(frozen_slow, s1);
    spec.b2(frozen_slow, yt, yt_lag, b2);
    spec.sigma2(frozen_slow, yt, yt_lag, s2);
    dw1_stream.gaussian_increments(dw1, h);
    dw2_stream.fast_increments(dw2, h, epsilon);

    auto x_next = node(aux.slow, k + 1);
    auto y_next = node(aux.fast, k + 1);
    for (std::size_t c = 0; c < n; ++c) {
      x_next[c] = xt[c] + b1[c] * h;
      y_next[c] = yt[c] + b2[c] * fast_h;
    }
    detail::add_matvec(s1, dw1, x_next);
    detail::add_matvec(s2, dw2, y_next);
    detail::check_state(x_next, xt, k + 1, options.divergence_threshold, "auxiliary slow component");
    detail::check_state(y_next, yt, k + 1, options.divergence_threshold, "auxiliary fast component");
  }
  return out;
}

DriftSource closed_form_drift(const LinearBenchmarkParams& params) {
  const double kappa = params.averaged_rate();
  return [kappa](const SegmentView& zeta, std::span<double> out) { out[0] = kappa * zeta.newest()[0]; };
}

EstimatedDrift::EstimatedDrift(SystemSpec spec, EstimatorConfig config, bool memoize, double quantum)
    : spec_(std::move(spec)), config_(std::move(config)), memoize_(memoize), quantum_(quantum) {
  if (!(quantum > 0.0)) throw UsageError("EstimatedDrift: quantum must be positive");
  if (config_.replicas >= (1u << 24)) throw UsageError("EstimatedDrift: too many replicas");
}

void EstimatedDrift::operator()(const SegmentView& zeta, std::span<double> out) {
  // Quantize, then hash the integer lattice point (FNV-1a over the bytes).
  std::vector<double> q(zeta.values().size());
  std::uint64_t digest = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double cell = std::round(zeta.values()[i] / quantum_);
    q[i] = cell * quantum_;
    const auto bits = static_cast<std::int64_t>(cell);
    unsigned char bytes[sizeof bits];
    std::memcpy(bytes, &bits, sizeof bits);
    for (unsigned char b : bytes) {
      digest ^= b;
      digest *= 0x100000001b3ull;
    }
  }
  if (memoize_) {
    if (auto it = cache_.find(digest); it != cache_.end()) {
      ++hits_;
      std::copy(it->second.value.begin(), it->second.value.end(), out.begin());
      return;
    }
  }

  EstimatorConfig cfg = config_;
  cfg.stream_path = digest & 0xFFFFFFFFull;
  cfg.first_sub = static_cast<std::uint32_t>((digest >> 32) % ((1u << 24) - cfg.replicas));
  const Segment key(zeta.tau(), zeta.step(), zeta.dim(), std::move(q));
  const auto est = estimate_averaged_drift(spec_, key, cfg);
  ++evaluations_;
  for (double se : est.std_error) max_std_error_ = std::max(max_std_error_, se);
  std::copy(est.value.begin(), est.value.end(), out.begin());
  if (memoize_) cache_.emplace(digest, Entry{est.value});
}

TrajectoryBundle simulate_averaged(const SystemSpec& spec, const Segment& xi, DriftSource drift,
                                   const TimeGrid& grid, NoiseStream w1, const SolverOptions& options) {
  if (!drift) throw UsageError("simulate_averaged: no drift source");
  SddeSpec averaged;
  averaged.n = spec.n;
  averaged.m = spec.m;
  averaged.tau = spec.tau;
  averaged.drift = std::move(drift);
  averaged.diffusion = spec.sigma1;
  return simulate_sdde(averaged, xi, grid, std::move(w1), PathLabel::Averaged, options);
}

}  // namespace twoscale
