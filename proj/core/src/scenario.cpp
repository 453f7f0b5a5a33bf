#include <algorithm>
#include <cmath>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "twoscale/averaging.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/harness.hpp"
#include "twoscale/solver.hpp"

namespace twoscale {

using json = nlohmann::json;

namespace {

const std::set<std::string> kScenarioKeys = {
    "name",     "experiment", "system",    "tau",          "T",          "horizon",
    "h",        "h_over_epsilon",          "epsilon",      "epsilons",   "p",
    "paths",    "seed",       "noise",     "delta",        "drift_source",
    "estimator", "memoize",   "quantum",   "delta_fractions", "mixing",  "check",
    "xi",       "eta",        "zeta",      "stability_cap", "dump_paths", "dump_limit",
    "gate"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

double positive(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const double v = j.at(key).get<double>();
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("\"") + key + "\" must be a positive number");
  }
  return v;
}

std::size_t count_at_least(const json& j, const char* key, std::size_t fallback, std::size_t minimum) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::int64_t>();
  if (v < static_cast<std::int64_t>(minimum)) {
    throw ConfigError(std::string("\"") + key + "\" must be at least " + std::to_string(minimum));
  }
  return static_cast<std::size_t>(v);
}

SegmentConfig parse_segment_config(const json& j, const char* what) {
  SegmentConfig c;
  if (j.is_number()) {
    c.constant = {j.get<double>()};
  } else if (j.is_array()) {
    c.constant = j.get<std::vector<double>>();
    if (c.constant.empty()) throw ConfigError(std::string(what) + ": empty constant");
  } else if (j.is_object() && j.contains("constant")) {
    reject_unknown(j, {"constant"}, what);
    const json& v = j.at("constant");
    c.constant = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
    if (c.constant.empty()) throw ConfigError(std::string(what) + ": empty constant");
  } else if (j.is_object() && j.contains("ramp")) {
    reject_unknown(j, {"ramp"}, what);
    const json& r = j.at("ramp");
    reject_unknown(r, {"start", "slope"}, std::string(what) + ".ramp");
    c.kind = SegmentConfig::Kind::Ramp;
    c.ramp_start = r.value("start", 0.0);
    c.ramp_slope = r.value("slope", 0.0);
  } else if (j.is_object()) {
    c.kind = SegmentConfig::Kind::Explicit;
    c.segment = segment_from_json(j);
  } else {
    throw ConfigError(std::string(what) + ": expected a number, an array or an object");
  }
  for (double v : c.constant) {
    if (!std::isfinite(v)) throw ConfigError(std::string(what) + ": non-finite value");
  }
  return c;
}

SystemConfig parse_system(const json& j) {
  reject_unknown(j, {"kind", "params", "name"}, "system");
  SystemConfig c;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear_benchmark") {
    c.kind = SystemConfig::Kind::LinearBenchmark;
    if (j.contains("params")) c.params = j.at("params").get<LinearBenchmarkParams>();
  } else if (kind == "registered") {
    c.kind = SystemConfig::Kind::Registered;
    c.name = j.at("name").get<std::string>();
    if (!SystemRegistry::global().contains(c.name)) {
      throw ConfigError("system: no registered system named \"" + c.name + "\"");
    }
    if (j.contains("params")) c.registered_params = j.at("params");
  } else {
    throw ConfigError("system.kind must be \"linear_benchmark\" or \"registered\", got \"" + kind + "\"");
  }
  return c;
}

void parse_estimator(const json& j, EstimatorConfig& e) {
  reject_unknown(j, {"burn_in", "horizon", "step", "replicas"}, "estimator");
  e.burn_in = j.contains("burn_in") ? j.at("burn_in").get<double>() : e.burn_in;
  if (e.burn_in < 0.0) throw ConfigError("estimator.burn_in must be non-negative");
  e.horizon = positive(j, "horizon", e.horizon);
  e.step = positive(j, "step", e.step);
  e.replicas = count_at_least(j, "replicas", e.replicas, 2);
}

void parse_mixing(const json& j, MixingSettings& m) {
  reject_unknown(j, {"replicas", "checkpoints", "step", "eta", "eta_prime"}, "mixing");
  m.replicas = count_at_least(j, "replicas", m.replicas, 1);
  m.checkpoints = count_at_least(j, "checkpoints", m.checkpoints, 3);
  m.step = positive(j, "step", m.step);
  if (j.contains("eta")) m.eta = parse_segment_config(j.at("eta"), "mixing.eta");
  if (j.contains("eta_prime")) m.eta_prime = parse_segment_config(j.at("eta_prime"), "mixing.eta_prime");
}

void parse_check(const json& j, CheckConfig& c) {
  reject_unknown(j,
                 {"trials", "radius", "candidate", "lambda3_cap", "growth_trials", "min_amplitude",
                  "max_amplitude", "sample_step"},
                 "check");
  c.trials = count_at_least(j, "trials", c.trials, 1);
  c.radius = positive(j, "radius", c.radius);
  if (j.contains("candidate")) {
    const auto v = j.at("candidate").get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError("check.candidate must be [lambda1, lambda2]");
    c.candidate = std::pair{v[0], v[1]};
  }
  c.lambda3_cap = positive(j, "lambda3_cap", c.lambda3_cap);
  c.growth_trials = count_at_least(j, "growth_trials", c.growth_trials, 4);
  c.min_amplitude = positive(j, "min_amplitude", c.min_amplitude);
  c.max_amplitude = positive(j, "max_amplitude", c.max_amplitude);
  if (c.max_amplitude < c.min_amplitude) throw ConfigError("check: max_amplitude < min_amplitude");
  c.sample_step = positive(j, "sample_step", c.sample_step);
}

std::vector<double> parse_epsilons(const json& j) {
  std::vector<double> eps = j.is_array() ? j.get<std::vector<double>>() : std::vector<double>{j.get<double>()};
  for (double e : eps) {
    if (!(e > 0.0) || e > 1.0) throw ConfigError("epsilon values must lie in (0, 1]");
  }
  std::sort(eps.begin(), eps.end(), std::greater<>());
  if (std::adjacent_find(eps.begin(), eps.end()) != eps.end()) throw ConfigError("repeated epsilon value");
  return eps;
}

bool uses_epsilons(Experiment e) {
  return e == Experiment::Converge || e == Experiment::AuxiliaryGap ||
         e == Experiment::SegmentContinuity;
}

void validate_grids(const Scenario& s) {
  for (double eps : s.epsilons) {
    double delta = 0.0;
    if (s.experiment == Experiment::AuxiliaryGap) {
      if (!s.delta && !(eps < std::exp(-1.0))) {
        throw ConfigError("auxiliary_gap with delta \"auto\" needs every epsilon below 1/e");
      }
      delta = s.block_length(eps);
    }
    const double h = delta > 0.0 ? s.step_for(eps, delta) : s.step_for(eps);
    if (h > s.stability_cap * eps * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "grid step " << h << " for epsilon=" << eps << " exceeds the stability cap "
         << s.stability_cap << " * epsilon";
      throw ConfigError(os.str());
    }
    try {
      (void)TimeGrid::make(s.horizon, h, s.tau);
    } catch (const Error& e) {
      throw ConfigError(std::string("epsilon grid: ") + e.what());
    }
  }
}

Scenario parse_impl(const json& j) {
  reject_unknown(j, kScenarioKeys, "scenario");
  Scenario s;
  s.source = j;
  s.name = j.value("name", s.name);
  if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("name must be non-empty and contain no path separators");
  }
  if (j.contains("experiment")) s.experiment = experiment_from_string(j.at("experiment").get<std::string>());
  if (j.contains("system")) s.system = parse_system(j.at("system"));
  s.tau = positive(j, "tau", s.tau);
  if (j.contains("T") && j.contains("horizon")) throw ConfigError("give either \"T\" or \"horizon\"");
  s.horizon = positive(j, j.contains("T") ? "T" : "horizon", s.horizon);
  if (j.contains("h") && j.contains("h_over_epsilon")) {
    throw ConfigError("give either \"h\" or \"h_over_epsilon\"");
  }
  if (j.contains("h")) s.step = positive(j, "h", 0.0);
  if (j.contains("h_over_epsilon")) s.step_over_epsilon = positive(j, "h_over_epsilon", 0.0);
  if (j.contains("epsilon") && j.contains("epsilons")) throw ConfigError("give either \"epsilon\" or \"epsilons\"");
  if (j.contains("epsilon")) s.epsilons = parse_epsilons(j.at("epsilon"));
  if (j.contains("epsilons")) s.epsilons = parse_epsilons(j.at("epsilons"));
  s.p = positive(j, "p", s.p);
  s.paths = count_at_least(j, "paths", s.paths, 2);
  if (j.contains("seed") && j.contains("noise")) throw ConfigError("give either \"seed\" or \"noise\"");
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("noise")) {
    reject_unknown(j.at("noise"), {"seed"}, "noise");
    s.seed = j.at("noise").at("seed").get<std::uint64_t>();
  }
  if (j.contains("delta")) {
    const json& d = j.at("delta");
    if (d.is_string()) {
      if (d.get<std::string>() != "auto") throw ConfigError("delta must be \"auto\" or a number");
    } else {
      s.delta = positive(j, "delta", 0.0);
    }
  }
  if (j.contains("drift_source")) {
    const auto src = j.at("drift_source").get<std::string>();
    if (src == "closed_form") {
      s.drift_source = DriftSourceKind::ClosedForm;
    } else if (src == "estimator") {
      s.drift_source = DriftSourceKind::Estimator;
    } else {
      throw ConfigError("drift_source must be \"closed_form\" or \"estimator\"");
    }
  }
  const bool averages = s.experiment == Experiment::Converge || s.experiment == Experiment::Simulate;
  if (averages && s.drift_source == DriftSourceKind::ClosedForm) {
    if (s.system.kind != SystemConfig::Kind::LinearBenchmark) {
      throw ConfigError("drift_source \"closed_form\" is only available for the linear benchmark");
    }
    if (s.system.params.c2 == s.system.params.c3) throw ConfigError("closed-form averaged drift needs c2 != c3");
  }
  s.estimator.seed = s.seed;
  if (j.contains("estimator")) parse_estimator(j.at("estimator"), s.estimator);
  if (j.contains("memoize")) s.memoize = j.at("memoize").get<bool>();
  s.quantum = positive(j, "quantum", s.quantum);
  if (j.contains("delta_fractions")) {
    s.delta_fractions = j.at("delta_fractions").get<std::vector<double>>();
    if (s.delta_fractions.size() < 3) throw ConfigError("delta_fractions needs at least three values");
    for (double f : s.delta_fractions) {
      if (!(f > 0.0) || f > 1.0) throw ConfigError("delta_fractions must lie in (0, 1]");
    }
  }
  s.mixing.eta.constant = {0.0};
  s.mixing.eta_prime.constant = {1.0};
  if (j.contains("mixing")) parse_mixing(j.at("mixing"), s.mixing);
  if (j.contains("check")) parse_check(j.at("check"), s.check);
  s.xi.constant = {1.0};
  if (j.contains("xi")) s.xi = parse_segment_config(j.at("xi"), "xi");
  if (j.contains("eta")) s.eta = parse_segment_config(j.at("eta"), "eta");
  s.zeta.constant = {1.0};
  if (j.contains("zeta")) s.zeta = parse_segment_config(j.at("zeta"), "zeta");
  s.stability_cap = positive(j, "stability_cap", s.stability_cap);
  if (j.contains("dump_paths")) s.dump_paths = j.at("dump_paths").get<bool>();
  s.dump_limit = count_at_least(j, "dump_limit", s.dump_limit, 1);
  if (j.contains("gate")) {
    s.gate = j.at("gate");
    if (!s.gate.is_object()) throw ConfigError("gate must be an object");
  }

  if (uses_epsilons(s.experiment) && s.epsilons.empty()) {
    throw ConfigError(std::string(to_string(s.experiment)) + " needs a non-empty epsilon list");
  }
  if (s.experiment == Experiment::SegmentContinuity && s.epsilons.size() != 1) {
    throw ConfigError("segment_continuity runs at a single epsilon");
  }
  if (s.experiment == Experiment::Simulate && s.epsilons.empty() && !s.step) {
    throw ConfigError("simulate without epsilon runs the averaged equation and needs \"h\"");
  }
  if (!s.step && !s.step_over_epsilon) s.step = 1e-3;
  // Building the system once here surfaces bad coefficient parameters as config errors.
  (void)s.system.build(s.tau);
  validate_grids(s);
  return s;
}

std::size_t shrink_to_divisor(double length, double raw) {
  const double ratio = length / raw;
  return static_cast<std::size_t>(std::max(1.0, std::ceil(ratio - 1e-9 * ratio)));
}

}  // namespace

std::string_view to_string(Experiment e) noexcept {
  switch (e) {
    case Experiment::Converge: return "converge";
    case Experiment::AuxiliaryGap: return "auxiliary_gap";
    case Experiment::SegmentContinuity: return "segment_continuity";
    case Experiment::Frozen: return "frozen";
    case Experiment::Mixing: return "mixing";
    case Experiment::Check: return "check";
    case Experiment::Simulate: return "simulate";
  }
  return "unknown";
}

Experiment experiment_from_string(std::string_view name) {
  if (name == "converge") return Experiment::Converge;
  if (name == "auxiliary_gap" || name == "aux-gap") return Experiment::AuxiliaryGap;
  if (name == "segment_continuity" || name == "seg-cont") return Experiment::SegmentContinuity;
  if (name == "frozen") return Experiment::Frozen;
  if (name == "mixing") return Experiment::Mixing;
  if (name == "check") return Experiment::Check;
  if (name == "simulate") return Experiment::Simulate;
  throw ConfigError("unknown experiment \"" + std::string(name) + "\"");
}

Segment SegmentConfig::materialize(double tau, double h, std::size_t n) const {
  switch (kind) {
    case Kind::Constant: {
      if (constant.size() != 1 && constant.size() != n) {
        throw ConfigError("constant segment has " + std::to_string(constant.size()) +
                          " coordinates, system dimension is " + std::to_string(n));
      }
      std::vector<double> v(n, constant.front());
      if (constant.size() == n) v = constant;
      return Segment::constant(tau, h, v);
    }
    case Kind::Ramp:
      return Segment::sample(tau, h, n, [&](double theta, std::span<double> out) {
        for (double& x : out) x = ramp_start + ramp_slope * theta;
      });
    case Kind::Explicit: {
      if (std::abs(segment->tau() - tau) > 1e-9 * tau) {
        std::ostringstream os;
        os << "explicit segment has tau=" << segment->tau() << ", scenario tau=" << tau;
        throw ConfigError(os.str());
      }
      if (segment->dim() != n) throw ConfigError("explicit segment dimension does not match the system");
      return segment->step() == h ? *segment : segment->resample(h);
    }
  }
  throw ConfigError("bad segment config");
}

SystemSpec SystemConfig::build(double tau) const {
  try {
    if (kind == Kind::LinearBenchmark) return linear_benchmark(params, tau);
    return SystemRegistry::global().make(name, registered_params, tau);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
}

double Scenario::step_for(double epsilon) const {
  const double raw = step ? *step : *step_over_epsilon * epsilon;
  return tau / static_cast<double>(shrink_to_divisor(tau, raw));
}

double Scenario::step_for(double epsilon, double block) const {
  const double raw = step_for(epsilon);
  return block / static_cast<double>(shrink_to_divisor(block, raw));
}

double Scenario::block_length(double epsilon) const {
  if (!delta) return khasminskii_delta(epsilon, tau).delta;
  return tau / static_cast<double>(shrink_to_divisor(tau, std::min(*delta, tau)));
}

std::string Scenario::digest() const {
  std::ostringstream os;
  os << source.dump() << "|experiment=" << to_string(experiment) << "|paths=" << paths
     << "|seed=" << seed;
  return fnv1a_hex(os.str());
}

Scenario parse_scenario(const json& config) {
  if (!config.is_object()) throw ConfigError("scenario config must be a JSON object");
  try {
    return parse_impl(config);
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenario(j);
}

}  // namespace twoscale
