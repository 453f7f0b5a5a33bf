// Command line front end: one subcommand per experiment.
//
//   twoscale <check|simulate|frozen|converge|aux-gap|seg-cont>
//            --config scenario.json --out DIR [--paths N] [--seed S] [--threads K] [--dump-paths]
//
// Exit codes: 0 pass, 2 gate failure, 3 divergence, 4 config error, 1 anything else.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "twoscale/errors.hpp"
#include "twoscale/harness.hpp"
#include "twoscale/parallel.hpp"

namespace {

constexpr int kExitConfig = 4;
constexpr int kExitDivergence = 3;
constexpr int kExitUnexpected = 1;

struct Arguments {
  std::string config;
  std::string out = "twoscale-out";
  std::optional<std::int64_t> paths;
  std::optional<std::uint64_t> seed;
  std::size_t threads = twoscale::default_thread_count();
  bool dump_paths = false;
};

nlohmann::json read_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw twoscale::ConfigError("cannot open config " + file);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw twoscale::ConfigError("config " + file + " is not valid JSON: " + e.what());
  }
}

/// Command line overrides are folded into the JSON so that the scenario
/// digest reflects what was actually run.
twoscale::Scenario scenario_for(const std::string& subcommand, const Arguments& args) {
  auto j = read_config(args.config);
  if (!j.is_object()) throw twoscale::ConfigError("scenario config must be a JSON object");
  const auto experiment = twoscale::experiment_from_string(subcommand);
  if (j.contains("experiment") && j["experiment"].is_string() &&
      twoscale::experiment_from_string(j["experiment"].get<std::string>()) != experiment) {
    std::cerr << "note: config experiment \"" << j["experiment"].get<std::string>() << "\" replaced by \""
              << twoscale::to_string(experiment) << "\"\n";
  }
  j["experiment"] = std::string(twoscale::to_string(experiment));
  if (args.paths) j["paths"] = *args.paths;
  if (args.seed) {
    if (j.contains("noise")) {
      j["noise"]["seed"] = *args.seed;
    } else {
      j["seed"] = *args.seed;
    }
  }
  return twoscale::parse_scenario(j);
}

int run(const std::string& subcommand, const Arguments& args) {
  const auto scenario = scenario_for(subcommand, args);
  twoscale::RunOptions options;
  options.threads = std::max<std::size_t>(args.threads, 1);
  const std::filesystem::path out = args.out;
  if (args.dump_paths || scenario.dump_paths) options.dump_dir = out / "paths";

  const auto report = twoscale::run_experiment(scenario, options);
  twoscale::write_report(report, out);
  if (scenario.experiment == twoscale::Experiment::Frozen) {
    const std::string summary = report.summary.dump(2);
    std::ofstream(out / "frozen.json") << summary << '\n';
    std::cout << summary << '\n';
  }
  for (const auto& m : report.gate_messages) std::cerr << "gate: " << m << '\n';
  const int code = twoscale::exit_code(report);
  std::cout << twoscale::to_string(report.experiment) << ' ' << report.scenario_name << ": "
            << (code == 0 ? "PASS" : code == kExitDivergence ? "DIVERGED" : "FAIL") << " ("
            << report.rows.size() << " rows, " << report.runtime_seconds << " s, hash "
            << report.reproducibility_hash << ")\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-time-scale stochastic delay systems: simulation, averaging and diagnostics"};
  app.require_subcommand(1);
  Arguments args;

  const std::pair<const char*, const char*> commands[] = {
      {"check", "Numerical checks of the structural assumptions on a system"},
      {"simulate", "Simulate coupled (or averaged) paths and summarize the endpoints"},
      {"frozen", "Averaged drift and mixing rate of the frozen fast equation"},
      {"converge", "Strong error between the slow path and the averaged path across epsilon"},
      {"aux-gap", "Gap between the slow path and its Khasminskii auxiliary across epsilon"},
      {"seg-cont", "Segment continuity moments across block lengths"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "Output directory for report.csv and report.json");
    sub->add_option("--paths", args.paths, "Override the number of Monte Carlo paths")
        ->check(CLI::Range(std::int64_t{2}, std::int64_t{1} << 40));
    sub->add_option("--seed", args.seed, "Override the noise seed");
    sub->add_option("--threads", args.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--dump-paths", args.dump_paths, "Write per-path trajectory CSVs under OUT/paths");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    return run(subcommand, args);
  } catch (const twoscale::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const twoscale::DivergenceError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUnexpected;
  }
}
