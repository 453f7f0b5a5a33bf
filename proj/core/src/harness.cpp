#include "twoscale/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "twoscale/averaging.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"
#include "twoscale/solver.hpp"

namespace twoscale {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Result of one independent task. Failures are recorded instead of thrown
/// so that one bad path only spoils its own row.
struct TaskOutcome {
  std::vector<double> values;
  std::string error;
  bool diverged = false;
};

template <class F>
std::vector<TaskOutcome> run_tasks(std::size_t count, std::size_t threads, F&& task) {
  std::vector<TaskOutcome> out(count);
  parallel_for(count, std::max<std::size_t>(threads, 1), [&](std::size_t i) {
    try {
      out[i].values = task(i);
    } catch (const DivergenceError& e) {
      out[i].error = e.what();
      out[i].diverged = true;
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

SolverOptions solver_options(const Scenario& s) {
  SolverOptions o;
  o.stability_cap = s.stability_cap;
  return o;
}

double gate_value(const Scenario& s, const char* key, double fallback) {
  if (!s.gate.contains(key)) return fallback;
  try {
    return s.gate.at(key).get<double>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("gate.") + key + " must be a number");
  }
}

/// W2 streams are distinct per epsilon: sub derives from the bits of epsilon.
std::uint32_t epsilon_tag(double epsilon) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &epsilon, sizeof bits);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (int b = 0; b < 8; ++b) {
    h ^= (bits >> (8 * b)) & 0xFF;
    h *= 0x100000001b3ull;
  }
  return static_cast<std::uint32_t>(h & 0xFFFFFF);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  if (v.empty()) return {kNaN, kNaN};
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

/// Collects column `col` of the outcomes [first, first + count). Returns the
/// first failure (in index order) when there is one.
const TaskOutcome* first_failure(const std::vector<TaskOutcome>& outcomes, std::size_t first,
                                 std::size_t count) {
  for (std::size_t i = first; i < first + count; ++i) {
    if (!outcomes[i].error.empty()) return &outcomes[i];
  }
  return nullptr;
}

std::vector<double> column(const std::vector<TaskOutcome>& outcomes, std::size_t first,
                           std::size_t count, std::size_t col) {
  std::vector<double> v;
  v.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) v.push_back(outcomes[i].values.at(col));
  return v;
}

void mark_failed(ReportRow& row, ExperimentReport& report, const std::string& error, bool diverged) {
  row.failed = true;
  row.value = kNaN;
  row.std_error = kNaN;
  row.extra["error"] = error;
  if (diverged) {
    row.extra["diverged"] = true;
    report.diverged = true;
  }
}

void fail_gate(ExperimentReport& report, std::string message) {
  report.gate_passed = false;
  report.gate_messages.push_back(std::move(message));
}

void note(ExperimentReport& report, std::string message) { report.gate_messages.push_back(std::move(message)); }

bool any_failed(const ExperimentReport& report) {
  return std::any_of(report.rows.begin(), report.rows.end(), [](const ReportRow& r) { return r.failed; });
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentReport start_report(const Scenario& s, Experiment e) {
  ExperimentReport r;
  r.experiment = e;
  r.scenario_name = s.name;
  r.scenario_digest = s.digest();
  return r;
}

void finish(ExperimentReport& report, std::chrono::steady_clock::time_point started) {
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report.reproducibility_hash = fnv1a_hex(report_csv(report));
}

std::filesystem::path dump_file(const Scenario& s, const RunOptions& o, const std::string& tag,
                                std::size_t path) {
  return *o.dump_dir / (s.name + "-" + tag + "_" + std::to_string(path) + ".csv");
}

bool should_dump(const Scenario& s, const RunOptions& o, std::size_t path) {
  return o.dump_dir.has_value() && path < s.dump_limit;
}

/// Per-epsilon grid and initial data. A setup error spoils that row only.
struct EpsilonSetup {
  double epsilon = 0.0;
  double delta = 0.0;
  TimeGrid grid;
  std::optional<Segment> xi;
  std::optional<Segment> eta;
  std::string error;
};

std::vector<EpsilonSetup> prepare(const Scenario& s, std::size_t n, bool with_blocks) {
  std::vector<EpsilonSetup> out;
  for (double eps : s.epsilons) {
    EpsilonSetup e;
    e.epsilon = eps;
    try {
      double h = s.step_for(eps);
      if (with_blocks) {
        e.delta = s.block_length(eps);
        h = s.step_for(eps, e.delta);
      }
      e.grid = TimeGrid::make(s.horizon, h, s.tau);
      e.xi = s.xi.materialize(s.tau, h, n);
      e.eta = s.eta.materialize(s.tau, h, n);
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

json grid_json(const TimeGrid& g) {
  return {{"h", g.step}, {"steps", g.steps}, {"tau_steps", g.tau_steps}};
}

std::string_view drift_name(DriftSourceKind k) {
  return k == DriftSourceKind::ClosedForm ? "closed_form" : "estimator";
}

/// Averaged drift for one task. Estimator-backed sources keep their own
/// cache; `stats` exposes their counters afterwards.
DriftSource make_drift(const Scenario& s, const SystemSpec& spec, std::shared_ptr<EstimatedDrift>& stats) {
  if (s.drift_source == DriftSourceKind::ClosedForm) return closed_form_drift(s.system.params);
  EstimatorConfig cfg = s.estimator;
  cfg.threads = 1;
  stats = std::make_shared<EstimatedDrift>(spec, cfg, s.memoize, s.quantum);
  return [est = stats](const SegmentView& zeta, std::span<double> out) { (*est)(zeta, out); };
}

void add_slope(ExperimentReport& report, bool by_delta) {
  std::vector<double> xs, ys;
  for (const auto& r : report.rows) {
    const auto& x = by_delta ? r.delta : r.epsilon;
    if (r.failed || !x || !(r.value > 0.0)) continue;
    xs.push_back(*x);
    ys.push_back(r.value);
  }
  if (xs.size() < 3) return;
  try {
    report.slope = slope_fit(xs, ys);
  } catch (const Error&) {
    report.slope.reset();
  }
}

std::vector<std::pair<double, double>> trend_input(const ExperimentReport& report) {
  std::vector<std::pair<double, double>> v;
  for (const auto& r : report.rows) {
    if (r.epsilon && !r.failed) v.emplace_back(r.value, r.std_error);
  }
  return v;
}

void gate_trend(ExperimentReport& report) {
  const auto v = trend_input(report);
  if (v.size() < 2) {
    note(report, "trend: fewer than two rows, nothing to compare");
    return;
  }
  std::string why;
  if (monotone_trend(v, &why)) {
    note(report, "trend: " + why);
  } else {
    fail_gate(report, "trend: " + why);
  }
}

}  // namespace

bool monotone_trend(const std::vector<std::pair<double, double>>& value_and_se, std::string* why) {
  std::size_t inversions = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i + 1 < value_and_se.size(); ++i) {
    const auto [a, sa] = value_and_se[i];
    const auto [b, sb] = value_and_se[i + 1];
    if (!std::isfinite(a) || !std::isfinite(b)) {
      if (why) *why = "non-finite moment";
      return false;
    }
    if (b <= a) continue;
    ++inversions;
    if (b - a > 2.0 * (sa + sb)) {
      os << "inversion between rows " << i << " and " << i + 1 << " exceeds the 2-sigma bars";
      if (why) *why = os.str();
      return false;
    }
    os << "one inversion between rows " << i << " and " << i + 1 << " within 2-sigma bars; ";
  }
  if (inversions > 1) {
    if (why) *why = std::to_string(inversions) + " inversions, at most one allowed";
    return false;
  }
  os << "decreasing";
  if (why) *why = os.str();
  return true;
}

ExperimentReport run_converge(const Scenario& s, const RunOptions& o) {
  if (s.epsilons.empty()) throw UsageError("run_converge: empty epsilon list");
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::Converge);
  const SystemSpec spec = s.system.build(s.tau);
  const auto setups = prepare(s, spec.n, false);
  const SolverOptions opts = solver_options(s);
  const std::size_t paths = s.paths;

  const auto outcomes = run_tasks(setups.size() * paths, o.threads, [&](std::size_t task) {
    const auto& e = setups[task / paths];
    const std::size_t path = task % paths;
    if (!e.error.empty()) throw ConfigError(e.error);
    const NoiseStream w1(s.seed, {path, Driver::W1, 0}, spec.m);
    const NoiseStream w2(s.seed, {path, Driver::W2, epsilon_tag(e.epsilon)}, spec.m);
    const auto coupled = simulate_coupled(spec, *e.xi, *e.eta, e.epsilon, e.grid, w1, w2, opts);
    std::shared_ptr<EstimatedDrift> est;
    const auto averaged = simulate_averaged(spec, *e.xi, make_drift(s, spec, est), e.grid, w1, opts);
    if (should_dump(s, o, path)) {
      const std::string tag = "e" + std::to_string(task / paths);
      write_trajectory_csv(coupled, dump_file(s, o, tag + "-coupled", path));
      write_trajectory_csv(averaged, dump_file(s, o, tag + "-averaged", path));
    }
    const double gap = sup_distance(coupled, averaged, 0.0, e.grid.horizon, PathComponent::Slow);
    return std::vector<double>{gap,
                               est ? static_cast<double>(est->evaluations()) : 0.0,
                               est ? static_cast<double>(est->cache_hits()) : 0.0,
                               est ? est->max_std_error() : 0.0};
  });

  for (std::size_t j = 0; j < setups.size(); ++j) {
    const auto& e = setups[j];
    ReportRow row;
    row.epsilon = e.epsilon;
    row.p = s.p;
    row.paths = paths;
    row.extra = {{"tau", s.tau}, {"drift_source", drift_name(s.drift_source)}};
    if (e.error.empty()) row.extra.update(grid_json(e.grid));
    if (const auto* f = first_failure(outcomes, j * paths, paths)) {
      mark_failed(row, report, f->error, f->diverged);
    } else {
      const auto gaps = column(outcomes, j * paths, paths, 0);
      const auto m = p_moment(gaps, s.p);
      row.value = m.value;
      row.std_error = m.std_error;
      if (s.drift_source == DriftSourceKind::Estimator) {
        const auto evals = column(outcomes, j * paths, paths, 1);
        const auto hits = column(outcomes, j * paths, paths, 2);
        const auto ses = column(outcomes, j * paths, paths, 3);
        double ev = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < paths; ++i) {
          ev += evals[i];
          hi += hits[i];
        }
        row.extra["estimator_evaluations"] = ev;
        row.extra["estimator_cache_hits"] = hi;
        row.extra["estimator_max_std_error"] = *std::max_element(ses.begin(), ses.end());
      }
    }
    report.rows.push_back(std::move(row));
  }
  add_slope(report, false);

  if (any_failed(report)) fail_gate(report, "some epsilon rows failed");
  const auto v = trend_input(report);
  const double largest = std::accumulate(v.begin(), v.end(), 0.0,
                                         [](double a, const auto& p) { return std::max(a, p.first); });
  if (!v.empty() && largest <= gate_value(s, "zero_tolerance", 1e-20)) {
    note(report, "moments vanish for every epsilon");
  } else {
    gate_trend(report);
    if (v.size() >= 2) {
      const double ratio = gate_value(s, "final_ratio", 1.0 / 3.0);
      std::ostringstream os;
      os << "final moment " << v.back().first << " vs " << ratio << " x first " << v.front().first;
      if (v.back().first < ratio * v.front().first) {
        note(report, os.str() + ": ok");
      } else {
        fail_gate(report, os.str() + ": too large");
      }
    }
    if (report.slope) {
      const double min_slope = gate_value(s, "min_slope", 0.3);
      std::ostringstream os;
      os << "slope " << report.slope->slope << " vs minimum " << min_slope;
      if (report.slope->slope > min_slope) {
        note(report, os.str() + ": ok");
      } else {
        fail_gate(report, os.str() + ": too small");
      }
    }
  }
  finish(report, started);
  return report;
}

ExperimentReport run_auxiliary_gap(const Scenario& s, const RunOptions& o) {
  if (s.epsilons.empty()) throw UsageError("run_auxiliary_gap: empty epsilon list");
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::AuxiliaryGap);
  const SystemSpec spec = s.system.build(s.tau);
  const auto setups = prepare(s, spec.n, true);
  const SolverOptions opts = solver_options(s);
  const std::size_t paths = s.paths;

  const auto outcomes = run_tasks(setups.size() * paths, o.threads, [&](std::size_t task) {
    const auto& e = setups[task / paths];
    const std::size_t path = task % paths;
    if (!e.error.empty()) throw ConfigError(e.error);
    const NoiseStream w1(s.seed, {path, Driver::W1, 0}, spec.m);
    const NoiseStream w2(s.seed, {path, Driver::W2, epsilon_tag(e.epsilon)}, spec.m);
    const auto aux = simulate_auxiliary(spec, *e.xi, *e.eta, e.epsilon, e.delta, e.grid, w1, w2, opts);
    if (should_dump(s, o, path)) {
      const std::string tag = "e" + std::to_string(task / paths);
      write_trajectory_csv(aux.coupled, dump_file(s, o, tag + "-coupled", path));
      write_trajectory_csv(aux.auxiliary, dump_file(s, o, tag + "-auxiliary", path));
    }
    double audit = 0.0;
    double checked = 0.0;
    for (std::size_t k = 0; k <= e.grid.steps; k += aux.block_steps) {
      const auto y = aux.coupled.fast_at(k);
      const auto yt = aux.auxiliary.fast_at(k);
      for (std::size_t c = 0; c < y.size(); ++c) audit = std::max(audit, std::abs(y[c] - yt[c]));
      checked += 1.0;
    }
    const double T = e.grid.horizon;
    return std::vector<double>{sup_distance(aux.coupled, aux.auxiliary, 0.0, T, PathComponent::Slow),
                               sup_distance(aux.coupled, aux.auxiliary, 0.0, T, PathComponent::Fast),
                               audit, checked, static_cast<double>(aux.block_steps)};
  });

  double audit_max = 0.0;
  double audit_count = 0.0;
  bool audit_complete = true;
  for (std::size_t j = 0; j < setups.size(); ++j) {
    const auto& e = setups[j];
    ReportRow row;
    row.epsilon = e.epsilon;
    row.p = s.p;
    row.paths = paths;
    row.extra = {{"tau", s.tau}, {"delta_mode", s.delta ? "fixed" : "auto"}};
    if (e.error.empty()) {
      row.delta = e.delta;
      row.extra.update(grid_json(e.grid));
      if (!s.delta) row.extra["delta_raw"] = khasminskii_delta(e.epsilon, s.tau).delta_raw;
      row.extra["blocks_per_tau"] = static_cast<std::size_t>(std::llround(s.tau / e.delta));
    }
    if (const auto* f = first_failure(outcomes, j * paths, paths)) {
      mark_failed(row, report, f->error, f->diverged);
      audit_complete = false;
    } else {
      const auto m = p_moment(column(outcomes, j * paths, paths, 0), s.p);
      const auto my = p_moment(column(outcomes, j * paths, paths, 1), s.p);
      const auto audits = column(outcomes, j * paths, paths, 2);
      const auto counts = column(outcomes, j * paths, paths, 3);
      const double audit = *std::max_element(audits.begin(), audits.end());
      row.value = m.value;
      row.std_error = m.std_error;
      row.extra["y_gap_moment"] = my.value;
      row.extra["y_gap_std_error"] = my.std_error;
      row.extra["reset_audit"] = audit;
      row.extra["block_steps"] = outcomes[j * paths].values[4];
      audit_max = std::max(audit_max, audit);
      for (double c : counts) audit_count += c;
    }
    report.rows.push_back(std::move(row));
  }

  ReportRow audit;
  audit.p = s.p;
  audit.paths = paths;
  audit.value = audit_max;
  audit.extra = {{"row", "reset_audit"}, {"breakpoints_checked", audit_count}};
  report.rows.push_back(std::move(audit));
  report.summary["reset_audit"] = audit_max;

  if (any_failed(report)) fail_gate(report, "some epsilon rows failed");
  gate_trend(report);
  if (audit_max == 0.0 && audit_complete) {
    note(report, "reset audit: Y~ equals Y at every breakpoint");
  } else if (audit_max != 0.0) {
    fail_gate(report, "reset audit: Y~ differs from Y at a breakpoint by " + format_double(audit_max));
  }
  finish(report, started);
  return report;
}

ExperimentReport run_segment_continuity(const Scenario& s, const RunOptions& o) {
  if (s.epsilons.empty()) throw UsageError("run_segment_continuity: needs an epsilon");
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::SegmentContinuity);
  const SystemSpec spec = s.system.build(s.tau);
  const SolverOptions opts = solver_options(s);
  const double eps = s.epsilons.front();
  const double h = s.step_for(eps);
  const TimeGrid grid = TimeGrid::make(s.horizon, h, s.tau);
  const Segment xi = s.xi.materialize(s.tau, h, spec.n);
  const Segment eta = s.eta.materialize(s.tau, h, spec.n);
  const std::size_t paths = s.paths;

  // Block lengths: fraction * tau, moved onto divisors of tau that the grid step divides.
  struct Block {
    double delta;
    std::string warning;
  };
  std::vector<Block> blocks;
  json warnings = json::array();
  for (double f : s.delta_fractions) {
    const double wanted = f * s.tau;
    const double count = std::max(1.0, std::round(s.tau / wanted));
    double delta = s.tau / count;
    const double multiple = std::max(1.0, std::round(delta / h));
    if (std::abs(delta / h - multiple) > 1e-9 * multiple) delta = multiple * h;
    Block b{delta, {}};
    if (std::abs(delta - wanted) > 1e-12 * wanted) {
      b.warning = "delta " + format_double(wanted) + " snapped to " + format_double(delta);
    }
    const bool duplicate = std::any_of(blocks.begin(), blocks.end(),
                                       [&](const Block& other) { return other.delta == delta; });
    if (duplicate) {
      warnings.push_back("delta " + format_double(wanted) + " dropped: duplicates another block after snapping");
      continue;
    }
    if (!b.warning.empty()) warnings.push_back(b.warning);
    blocks.push_back(std::move(b));
  }
  std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.delta > b.delta; });

  std::vector<TrajectoryBundle> bundles(paths);
  const auto sims = run_tasks(paths, o.threads, [&](std::size_t path) {
    const NoiseStream w1(s.seed, {path, Driver::W1, 0}, spec.m);
    const NoiseStream w2(s.seed, {path, Driver::W2, epsilon_tag(eps)}, spec.m);
    bundles[path] = simulate_coupled(spec, xi, eta, eps, grid, w1, w2, opts);
    if (should_dump(s, o, path)) write_trajectory_csv(bundles[path], dump_file(s, o, "coupled", path));
    return std::vector<double>{};
  });
  const auto* sim_failure = first_failure(sims, 0, paths);

  std::vector<double> times(grid.steps);
  for (std::size_t k = 1; k <= grid.steps; ++k) times[k - 1] = grid.time(k);
  std::vector<TaskOutcome> disp;
  if (!sim_failure) {
    disp = run_tasks(blocks.size() * paths, o.threads, [&](std::size_t task) {
      const auto& b = bundles[task % paths];
      return segment_displacement_per_path(std::span<const TrajectoryBundle>(&b, 1),
                                           blocks[task / paths].delta, s.p, times);
    });
  }

  for (std::size_t j = 0; j < blocks.size(); ++j) {
    ReportRow row;
    row.epsilon = eps;
    row.delta = blocks[j].delta;
    row.p = s.p;
    row.paths = paths;
    row.extra = {{"tau", s.tau}, {"delta_over_tau", blocks[j].delta / s.tau}, {"sample_times", times.size()}};
    row.extra.update(grid_json(grid));
    if (!blocks[j].warning.empty()) row.extra["warning"] = blocks[j].warning;
    const TaskOutcome* f = sim_failure ? sim_failure : first_failure(disp, j * paths, paths);
    if (f) {
      mark_failed(row, report, f->error, f->diverged);
    } else {
      const auto m = p_moment(column(disp, j * paths, paths, 0), 1.0);
      row.value = m.value;
      row.std_error = m.std_error;
    }
    report.rows.push_back(std::move(row));
  }
  add_slope(report, true);
  report.summary["warnings"] = warnings;

  if (any_failed(report)) fail_gate(report, "some delta rows failed");
  const double required = gate_value(s, "slope_factor", 0.9) * (s.p - 2.0) / 2.0;
  if (!report.slope) {
    fail_gate(report, "slope: fewer than three usable delta rows");
  } else {
    std::ostringstream os;
    os << "slope " << report.slope->slope << " vs required " << required;
    if (report.slope->slope >= required) {
      note(report, os.str() + ": ok");
    } else {
      fail_gate(report, os.str() + ": too small");
    }
  }
  finish(report, started);
  return report;
}

ExperimentReport run_check(const Scenario& s, const RunOptions&) {
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::Check);
  const SystemSpec spec = s.system.build(s.tau);
  const CheckConfig& c = s.check;
  const double hs = s.tau / std::max(1.0, std::ceil(s.tau / c.sample_step - 1e-9));

  auto checked_row = [&](const char* name, std::size_t samples, auto&& body) {
    ReportRow row;
    row.p = s.p;
    row.paths = samples;
    row.extra = {{"check", name}};
    try {
      const bool pass = body(row);
      row.extra["pass"] = pass;
      if (!pass) fail_gate(report, std::string(name) + ": failed");
      else note(report, std::string(name) + ": passed");
    } catch (const DivergenceError& e) {
      mark_failed(row, report, e.what(), true);
      fail_gate(report, std::string(name) + ": " + e.what());
    } catch (const std::exception& e) {
      mark_failed(row, report, e.what(), false);
      fail_gate(report, std::string(name) + ": " + e.what());
    }
    report.rows.push_back(std::move(row));
  };

  checked_row("dissipativity", c.trials, [&](ReportRow& row) {
    const auto sampler = box_dissipativity_sampler(spec, hs, c.radius, s.seed);
    const auto r = check_dissipativity(spec, sampler, c.trials, c.candidate);
    row.value = r.worst_violation;
    row.extra["lambda1"] = r.lambda1;
    row.extra["lambda2"] = r.lambda2;
    row.extra["candidate"] = c.candidate.has_value();
    row.extra["radius"] = c.radius;
    return r.pass;
  });
  checked_row("growth_lipschitz", c.growth_trials, [&](ReportRow& row) {
    const auto sampler = growing_segment_sampler(spec.n, s.tau, hs, c.min_amplitude, c.max_amplitude,
                                                 c.growth_trials, s.seed);
    const auto r = check_growth_and_lipschitz(spec, sampler, c.growth_trials);
    row.value = r.L_estimate;
    row.extra["growth_estimate"] = r.growth_estimate;
    row.extra["lipschitz_estimate"] = r.lipschitz_estimate;
    json witnesses = json::array();
    for (const auto& w : r.max_ratio_points) {
      witnesses.push_back({{"chi_norm", w.chi_norm}, {"phi_norm", w.phi_norm}, {"ratio", w.ratio}});
    }
    row.extra["max_ratio_points"] = witnesses;
    return r.pass;
  });
  checked_row("initial_segment", 1, [&](ReportRow& row) {
    const Segment xi = s.xi.materialize(s.tau, hs, spec.n);
    row.value = xi.lipschitz_modulus();
    row.extra["lambda3_cap"] = c.lambda3_cap;
    return check_initial_segment(xi, c.lambda3_cap);
  });
  finish(report, started);
  return report;
}

namespace {

void frozen_rows(const Scenario& s, const RunOptions& o, ExperimentReport& report, bool with_bbar) {
  const SystemSpec spec = s.system.build(s.tau);
  json summary;
  std::optional<AveragedDriftEstimate> est;
  if (with_bbar) {
    const Segment zeta = s.zeta.materialize(s.tau, s.estimator.step, spec.n);
    std::string digest(zeta.values().size() * sizeof(double), '\0');
    std::memcpy(digest.data(), zeta.values().data(), digest.size());
    summary["zeta_digest"] = fnv1a_hex(digest);
    EstimatorConfig cfg = s.estimator;
    cfg.threads = o.threads;
    for (std::size_t i = 0; i < spec.n; ++i) {
      ReportRow row;
      row.p = s.p;
      row.paths = cfg.replicas;
      row.extra = {{"quantity", "bbar"}, {"coordinate", i}, {"burn_in", cfg.burn_in},
                   {"horizon", cfg.horizon}, {"h", cfg.step}};
      report.rows.push_back(std::move(row));
    }
    const std::size_t first = report.rows.size() - spec.n;
    try {
      est = estimate_averaged_drift(spec, zeta, cfg);
      for (std::size_t i = 0; i < spec.n; ++i) {
        report.rows[first + i].value = est->value[i];
        report.rows[first + i].std_error = est->std_error[i];
      }
      summary["bbar"] = est->value;
      summary["std_error"] = est->std_error;
      for (const auto& w : est->warnings) note(report, "estimator: " + w);
    } catch (const std::exception& e) {
      const bool div = dynamic_cast<const DivergenceError*>(&e) != nullptr;
      for (std::size_t i = 0; i < spec.n; ++i) mark_failed(report.rows[first + i], report, e.what(), div);
      summary["bbar"] = nullptr;
      summary["std_error"] = nullptr;
    }
  }

  ReportRow row;
  row.p = s.p;
  row.paths = s.mixing.replicas;
  const MixingSettings& m = s.mixing;
  row.extra = {{"quantity", "mixing_rate"}, {"h", m.step}, {"checkpoints", m.checkpoints}};
  try {
    const TimeGrid grid = TimeGrid::make(static_cast<double>(m.checkpoints) * s.tau, m.step, s.tau);
    const Segment zeta = s.zeta.materialize(s.tau, m.step, spec.n);
    const Segment eta = m.eta.materialize(s.tau, m.step, spec.n);
    const Segment eta_prime = m.eta_prime.materialize(s.tau, m.step, spec.n);
    MixingConfig cfg;
    cfg.replicas = m.replicas;
    cfg.seed = s.seed;
    cfg.threads = o.threads;
    cfg.solver = solver_options(s);
    const DecayFit fit = mixing_decay(spec, zeta, eta, eta_prime, grid, cfg);
    row.value = fit.fitted_rate;
    row.std_error = fit.rate_std_error;
    row.extra["r_squared"] = fit.r_squared;
    row.extra["times"] = fit.times;
    row.extra["log_gaps"] = fit.log_gaps;
    summary["fitted_rate"] = fit.fitted_rate;
    summary["r_squared"] = fit.r_squared;
  } catch (const std::exception& e) {
    mark_failed(row, report, e.what(), dynamic_cast<const DivergenceError*>(&e) != nullptr);
    summary["fitted_rate"] = nullptr;
    summary["r_squared"] = nullptr;
  }
  report.rows.push_back(std::move(row));
  report.summary = summary;

  if (any_failed(report)) fail_gate(report, "some rows failed");
  if (est && s.gate.contains("bbar")) {
    const auto expected = s.gate.at("bbar").get<std::vector<double>>();
    const double tol = gate_value(s, "bbar_tolerance", 0.02);
    for (std::size_t i = 0; i < std::min(expected.size(), est->value.size()); ++i) {
      const double allowed = std::max(3.0 * est->std_error[i], tol);
      std::ostringstream os;
      os << "bbar[" << i << "] = " << est->value[i] << " vs " << expected[i] << " (allowed " << allowed << ")";
      if (std::abs(est->value[i] - expected[i]) <= allowed) note(report, os.str() + ": ok");
      else fail_gate(report, os.str() + ": off");
    }
  }
  const ReportRow& mix = report.rows.back();
  if (!mix.failed && s.gate.contains("rate")) {
    const double expected = gate_value(s, "rate", 0.0);
    const double rel = gate_value(s, "rate_rel_tol", 0.25);
    std::ostringstream os;
    os << "fitted rate " << mix.value << " vs " << expected << " (+-" << rel * 100 << "%)";
    if (std::abs(mix.value - expected) <= rel * std::abs(expected)) note(report, os.str() + ": ok");
    else fail_gate(report, os.str() + ": off");
  }
  if (!mix.failed && s.gate.contains("min_r_squared")) {
    const double r2 = mix.extra.at("r_squared").get<double>();
    const double need = gate_value(s, "min_r_squared", 0.98);
    if (r2 >= need) note(report, "r_squared " + format_double(r2) + ": ok");
    else fail_gate(report, "r_squared " + format_double(r2) + " below " + format_double(need));
  }
}

}  // namespace

ExperimentReport run_frozen(const Scenario& s, const RunOptions& o) {
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::Frozen);
  frozen_rows(s, o, report, true);
  finish(report, started);
  return report;
}

ExperimentReport run_mixing(const Scenario& s, const RunOptions& o) {
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::Mixing);
  frozen_rows(s, o, report, false);
  finish(report, started);
  return report;
}

ExperimentReport run_simulate(const Scenario& s, const RunOptions& o) {
  const auto started = std::chrono::steady_clock::now();
  auto report = start_report(s, Experiment::Simulate);
  const SystemSpec spec = s.system.build(s.tau);
  const SolverOptions opts = solver_options(s);
  const std::size_t paths = s.paths;
  const bool averaged_only = s.epsilons.empty();

  std::vector<EpsilonSetup> setups;
  if (averaged_only) {
    EpsilonSetup e;
    try {
      const double h = s.step_for(1.0);
      e.grid = TimeGrid::make(s.horizon, h, s.tau);
      e.xi = s.xi.materialize(s.tau, h, spec.n);
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    setups.push_back(std::move(e));
  } else {
    setups = prepare(s, spec.n, false);
  }

  const auto outcomes = run_tasks(setups.size() * paths, o.threads, [&](std::size_t task) {
    const auto& e = setups[task / paths];
    const std::size_t path = task % paths;
    if (!e.error.empty()) throw ConfigError(e.error);
    const NoiseStream w1(s.seed, {path, Driver::W1, 0}, spec.m);
    TrajectoryBundle b;
    if (averaged_only) {
      std::shared_ptr<EstimatedDrift> est;
      b = simulate_averaged(spec, *e.xi, make_drift(s, spec, est), e.grid, w1, opts);
    } else {
      const NoiseStream w2(s.seed, {path, Driver::W2, epsilon_tag(e.epsilon)}, spec.m);
      b = simulate_coupled(spec, *e.xi, *e.eta, e.epsilon, e.grid, w1, w2, opts);
    }
    if (should_dump(s, o, path)) {
      const std::string tag = averaged_only ? "averaged" : "e" + std::to_string(task / paths) + "-coupled";
      write_trajectory_csv(b, dump_file(s, o, tag, path));
    }
    std::vector<double> v;
    const auto x = b.slow_at(e.grid.steps);
    v.insert(v.end(), x.begin(), x.end());
    if (b.has_fast()) {
      const auto y = b.fast_at(e.grid.steps);
      v.insert(v.end(), y.begin(), y.end());
    }
    return v;
  });

  for (std::size_t j = 0; j < setups.size(); ++j) {
    const auto& e = setups[j];
    ReportRow row;
    if (!averaged_only) row.epsilon = e.epsilon;
    row.p = s.p;
    row.paths = paths;
    row.extra = {{"tau", s.tau}, {"T", s.horizon}, {"process", averaged_only ? "averaged" : "coupled"}};
    if (e.error.empty()) row.extra.update(grid_json(e.grid));
    if (const auto* f = first_failure(outcomes, j * paths, paths)) {
      mark_failed(row, report, f->error, f->diverged);
    } else {
      json slow = json::array(), slow_se = json::array(), fast = json::array();
      for (std::size_t c = 0; c < spec.n; ++c) {
        const auto ms = mean_se(column(outcomes, j * paths, paths, c));
        slow.push_back(ms.mean);
        slow_se.push_back(ms.se);
        if (!averaged_only) fast.push_back(mean_se(column(outcomes, j * paths, paths, spec.n + c)).mean);
      }
      const auto first = mean_se(column(outcomes, j * paths, paths, 0));
      row.value = first.mean;
      row.std_error = first.se;
      row.extra["mean_slow_end"] = slow;
      row.extra["std_error_slow_end"] = slow_se;
      if (!averaged_only) row.extra["mean_fast_end"] = fast;
    }
    report.rows.push_back(std::move(row));
  }
  if (any_failed(report)) fail_gate(report, "some rows failed");
  if (s.gate.contains("expected_mean")) {
    const double expected = gate_value(s, "expected_mean", 0.0);
    const double tol = gate_value(s, "tolerance", 0.0);
    for (const auto& r : report.rows) {
      if (r.failed) continue;
      const double allowed = std::max(tol, 3.0 * r.std_error);
      std::ostringstream os;
      os << "mean " << r.value << " vs " << expected << " (allowed " << allowed << ")";
      if (std::abs(r.value - expected) <= allowed) note(report, os.str() + ": ok");
      else fail_gate(report, os.str() + ": off");
    }
  }
  finish(report, started);
  return report;
}

ExperimentReport run_experiment(const Scenario& s, const RunOptions& o) {
  switch (s.experiment) {
    case Experiment::Converge: return run_converge(s, o);
    case Experiment::AuxiliaryGap: return run_auxiliary_gap(s, o);
    case Experiment::SegmentContinuity: return run_segment_continuity(s, o);
    case Experiment::Frozen: return run_frozen(s, o);
    case Experiment::Mixing: return run_mixing(s, o);
    case Experiment::Check: return run_check(s, o);
    case Experiment::Simulate: return run_simulate(s, o);
  }
  throw UsageError("unknown experiment");
}

// ---------------------------------------------------------------------------
// Reporting

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "schema_version,experiment,epsilon,delta,p,paths,value,std_error,extra_json\n";
  for (const auto& r : report.rows) {
    json extra = r.extra;
    if (r.failed) extra["failed"] = true;
    std::string cell = extra.dump();
    std::string quoted = "\"";
    for (char ch : cell) {
      if (ch == '"') quoted += '"';
      quoted += ch;
    }
    quoted += '"';
    os << kCsvSchemaVersion << ',' << to_string(report.experiment) << ','
       << (r.epsilon ? format_double(*r.epsilon) : "") << ',' << (r.delta ? format_double(*r.delta) : "")
       << ',' << format_double(r.p) << ',' << r.paths << ',' << format_double(r.value) << ','
       << format_double(r.std_error) << ',' << quoted << '\n';
  }
  return os.str();
}

json report_json(const ExperimentReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"epsilon", r.epsilon ? json(*r.epsilon) : json(nullptr)},
                    {"delta", r.delta ? json(*r.delta) : json(nullptr)},
                    {"p", r.p},
                    {"paths", r.paths},
                    {"value", std::isfinite(r.value) ? json(r.value) : json(nullptr)},
                    {"std_error", std::isfinite(r.std_error) ? json(r.std_error) : json(nullptr)},
                    {"failed", r.failed},
                    {"extra", r.extra}});
  }
  json j = {{"schema_version", kCsvSchemaVersion},
            {"experiment", to_string(report.experiment)},
            {"scenario", report.scenario_name},
            {"scenario_digest", report.scenario_digest},
            {"rows", rows},
            {"summary", report.summary},
            {"gate", {{"passed", report.gate_passed}, {"messages", report.gate_messages}}},
            {"diverged", report.diverged},
            {"runtime_seconds", report.runtime_seconds},
            {"reproducibility_hash", report.reproducibility_hash}};
  if (report.slope) {
    j["slope_fit"] = {{"xs", report.slope->xs},
                      {"ys", report.slope->ys},
                      {"slope", report.slope->slope},
                      {"intercept", report.slope->intercept},
                      {"r_squared", report.slope->r_squared}};
  } else {
    j["slope_fit"] = nullptr;
  }
  return j;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "report.csv", std::ios::binary);
    csv << report_csv(report);
    if (!csv) throw UsageError("cannot write " + (dir / "report.csv").string());
  }
  std::ofstream js(dir / "report.json", std::ios::binary);
  js << report_json(report).dump(2) << '\n';
  if (!js) throw UsageError("cannot write " + (dir / "report.json").string());
}

int exit_code(const ExperimentReport& report) noexcept {
  if (report.diverged) return 3;
  if (!report.gate_passed) return 2;
  return 0;
}

void write_trajectory_csv(const TrajectoryBundle& bundle, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw UsageError("cannot write " + file.string());
  out << 't';
  for (std::size_t c = 1; c <= bundle.dim; ++c) out << ",x_" << c;
  if (bundle.has_fast()) {
    for (std::size_t c = 1; c <= bundle.dim; ++c) out << ",y_" << c;
  }
  out << '\n';
  const std::size_t lag = bundle.grid.tau_steps;
  for (std::size_t i = 0; i < bundle.grid.nodes(); ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(lag)) * bundle.grid.step;
    out << format_double(t);
    for (std::size_t c = 0; c < bundle.dim; ++c) out << ',' << format_double(bundle.slow[i * bundle.dim + c]);
    if (bundle.has_fast()) {
      for (std::size_t c = 0; c < bundle.dim; ++c) out << ',' << format_double(bundle.fast[i * bundle.dim + c]);
    }
    out << '\n';
  }
}

}  // namespace twoscale
