#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "twoscale/frozen.hpp"
#include "twoscale/metrics.hpp"
#include "twoscale/segment.hpp"
#include "twoscale/systems.hpp"

namespace twoscale {

enum class Experiment { Converge, AuxiliaryGap, SegmentContinuity, Frozen, Mixing, Check, Simulate };

std::string_view to_string(Experiment e) noexcept;
/// Accepts both the config spelling ("auxiliary_gap") and the CLI one ("aux-gap").
Experiment experiment_from_string(std::string_view name);

/// How an initial segment is described in a config. It is materialized on
/// whatever grid a run needs.
struct SegmentConfig {
  enum class Kind { Constant, Ramp, Explicit };
  Kind kind = Kind::Constant;
  std::vector<double> constant{0.0};
  double ramp_start = 0.0;  // value at theta = 0
  double ramp_slope = 0.0;  // per unit time
  std::optional<Segment> segment;

  /// Explicit segments are re-gridded by linear interpolation when needed.
  Segment materialize(double tau, double h, std::size_t n) const;
};

struct SystemConfig {
  enum class Kind { LinearBenchmark, Registered };
  Kind kind = Kind::LinearBenchmark;
  LinearBenchmarkParams params;
  std::string name;
  nlohmann::json registered_params = nlohmann::json::object();

  SystemSpec build(double tau) const;
};

enum class DriftSourceKind { ClosedForm, Estimator };

struct CheckConfig {
  std::size_t trials = 10000;
  double radius = 10.0;
  std::optional<std::pair<double, double>> candidate;
  double lambda3_cap = 1.0;
  std::size_t growth_trials = 400;
  double min_amplitude = 0.1;
  double max_amplitude = 10.0;
  double sample_step = 0.01;
};

struct MixingSettings {
  std::size_t replicas = 8;
  std::size_t checkpoints = 12;  // horizon = checkpoints * tau
  double step = 1e-3;
  SegmentConfig eta;
  SegmentConfig eta_prime;
};

struct Scenario {
  std::string name = "scenario";
  Experiment experiment = Experiment::Converge;
  SystemConfig system;
  double tau = 1.0;
  SegmentConfig xi;
  SegmentConfig eta;
  SegmentConfig zeta;
  double horizon = 1.0;
  std::optional<double> step;               // "h"
  std::optional<double> step_over_epsilon;  // "h_over_epsilon"
  std::vector<double> epsilons;
  double p = 2.0;
  std::size_t paths = 64;
  std::uint64_t seed = 1;
  std::optional<double> delta;  // empty means "auto"
  DriftSourceKind drift_source = DriftSourceKind::ClosedForm;
  EstimatorConfig estimator;
  bool memoize = true;
  double quantum = 1e-4;
  std::vector<double> delta_fractions{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
  MixingSettings mixing;
  CheckConfig check;
  double stability_cap = 0.1;
  bool dump_paths = false;
  std::size_t dump_limit = 8;
  /// Optional gate thresholds, e.g. {"min_slope": 0.3, "final_ratio": 0.333}.
  nlohmann::json gate = nlohmann::json::object();
  nlohmann::json source;

  /// Grid step for a given epsilon: the configured step (or step_over_epsilon
  /// times epsilon) shrunk to the nearest value that divides tau.
  double step_for(double epsilon) const;
  /// Same, additionally dividing the block length delta (a divisor of tau).
  double step_for(double epsilon, double block) const;
  /// Block length for the auxiliary construction: the Khasminskii schedule
  /// for "auto", otherwise the configured delta shrunk to a divisor of tau.
  double block_length(double epsilon) const;
  std::string digest() const;
};

/// Throws ConfigError on malformed or inconsistent input.
Scenario parse_scenario(const nlohmann::json& config);
Scenario load_scenario(const std::filesystem::path& file);

inline constexpr int kCsvSchemaVersion = 1;

struct ReportRow {
  std::optional<double> epsilon;
  std::optional<double> delta;
  double p = 0.0;
  std::size_t paths = 0;
  double value = 0.0;
  double std_error = 0.0;
  nlohmann::json extra = nlohmann::json::object();
  bool failed = false;
};

struct ExperimentReport {
  Experiment experiment = Experiment::Converge;
  std::string scenario_name;
  std::string scenario_digest;
  std::vector<ReportRow> rows;
  std::optional<SlopeFit> slope;
  nlohmann::json summary = nlohmann::json::object();
  bool gate_passed = true;
  std::vector<std::string> gate_messages;
  bool diverged = false;
  double runtime_seconds = 0.0;
  std::string reproducibility_hash;
};

struct RunOptions {
  std::size_t threads = 1;
  /// Per-path trajectory CSVs go here when set.
  std::optional<std::filesystem::path> dump_dir;
};

ExperimentReport run_experiment(const Scenario& scenario, const RunOptions& options = {});

ExperimentReport run_converge(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_auxiliary_gap(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_segment_continuity(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_check(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_frozen(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_mixing(const Scenario& scenario, const RunOptions& options = {});
ExperimentReport run_simulate(const Scenario& scenario, const RunOptions& options = {});

/// Moments ordered by decreasing epsilon decrease, allowing at most one
/// inversion and only between neighbours whose 2-sigma bars overlap.
bool monotone_trend(const std::vector<std::pair<double, double>>& value_and_se, std::string* why = nullptr);

std::string report_csv(const ExperimentReport& report);
nlohmann::json report_json(const ExperimentReport& report);
/// Writes report.csv and report.json into `dir` (created if missing).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// CLI exit code: 0 pass, 2 gate failure, 3 divergence.
int exit_code(const ExperimentReport& report) noexcept;

/// CSV dump of one bundle: t, x_1..x_n[, y_1..y_n] at the forward grid times.
void write_trajectory_csv(const TrajectoryBundle& bundle, const std::filesystem::path& file);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace twoscale
