#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "twoscale/errors.hpp"
#include "twoscale/harness.hpp"

using namespace twoscale;
using nlohmann::json;

namespace {

json small_converge() {
  return json::parse(R"({
    "name": "small",
    "experiment": "converge",
    "system": {"kind": "linear_benchmark", "params": {"s1": 0.3, "s2": 0.3}},
    "tau": 0.1,
    "T": 0.5,
    "h_over_epsilon": 0.05,
    "epsilon": [0.02, 0.1, 0.05],
    "xi": 1.0,
    "eta": 0.6666666666666666,
    "p": 2,
    "paths": 16,
    "seed": 3,
    "drift_source": "closed_form"
  })");
}

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("experiment names round trip") {
  for (auto e : {Experiment::Converge, Experiment::AuxiliaryGap, Experiment::SegmentContinuity, Experiment::Frozen,
                 Experiment::Mixing, Experiment::Check, Experiment::Simulate}) {
    CHECK(experiment_from_string(std::string(to_string(e))) == e);
  }
  CHECK(experiment_from_string("aux-gap") == Experiment::AuxiliaryGap);
  CHECK(experiment_from_string("seg-cont") == Experiment::SegmentContinuity);
  CHECK_THROWS_AS(experiment_from_string("nope"), ConfigError);
}

TEST_CASE("scenario parsing") {
  const Scenario s = parse_scenario(small_converge());
  CHECK(s.name == "small");
  CHECK(s.experiment == Experiment::Converge);
  CHECK(s.epsilons == std::vector<double>{0.1, 0.05, 0.02});
  CHECK(s.paths == 16);
  CHECK(s.step_for(0.05) == doctest::Approx(0.0025));
  CHECK(s.digest() == parse_scenario(small_converge()).digest());
  auto other = small_converge();
  other["seed"] = 4;
  CHECK(parse_scenario(other).digest() != s.digest());
}

TEST_CASE("scenario errors are ConfigError") {
  auto with = [](const char* key, json value) {
    auto j = small_converge();
    j[key] = std::move(value);
    return j;
  };
  CHECK_THROWS_AS(parse_scenario(with("unknown_key", 1)), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("epsilon", json::array())), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("epsilon", json::array({0.1, 0.1}))), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("epsilon", json::array({-0.1}))), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("paths", 1)), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("tau", 0.0)), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("h_over_epsilon", 0.5)), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("experiment", "bogus")), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("system", json{{"kind", "registered"}, {"name", "missing"}})), ConfigError);
  auto aux = small_converge();
  aux["experiment"] = "aux-gap";
  aux["epsilon"] = json::array({0.5, 0.1});
  CHECK_THROWS_AS(parse_scenario(aux), ConfigError);
  CHECK_THROWS_AS(parse_scenario(json::array()), ConfigError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST_CASE("monotone_trend") {
  using V = std::vector<std::pair<double, double>>;
  std::string why;
  CHECK(monotone_trend(V{{4, 0.1}, {2, 0.1}, {1, 0.1}}, &why));
  CHECK(why == "decreasing");
  CHECK(monotone_trend(V{{4, 0.1}, {2, 0.1}, {2, 0.1}}));
  CHECK(monotone_trend(V{{4, 0.5}, {2, 0.5}, {2.5, 0.5}, {1, 0.5}}));
  CHECK_FALSE(monotone_trend(V{{4, 0.01}, {2, 0.01}, {3, 0.01}, {1, 0.01}}, &why));
  CHECK(why.find("2-sigma") != std::string::npos);
  CHECK_FALSE(monotone_trend(V{{4, 1}, {4.5, 1}, {3, 1}, {3.5, 1}}, &why));
  CHECK(why.find("2 inversions") != std::string::npos);
  CHECK_FALSE(monotone_trend(V{{4, 1}, {NAN, 1}}));
  CHECK(monotone_trend(V{}));
  CHECK(monotone_trend(V{{1, 0}}));
}

TEST_CASE("CSV formatting and quoting") {
  ExperimentReport r;
  r.experiment = Experiment::Converge;
  ReportRow row;
  row.epsilon = 0.1;
  row.p = 2.0;
  row.paths = 4;
  row.value = 1.0 / 3.0;
  row.std_error = 0.5;
  row.extra = json{{"note", "a \"b\""}};
  r.rows.push_back(row);
  ReportRow bare;
  bare.failed = true;
  r.rows.push_back(bare);
  const std::string csv = report_csv(r);
  std::istringstream in(csv);
  std::string header, first, second;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  CHECK(header == "schema_version,experiment,epsilon,delta,p,paths,value,std_error,extra_json");
  CHECK(first == R"(1,converge,0.10000000000000001,,2,4,0.33333333333333331,0.5,"{""note"":""a \""b\""""}")");
  CHECK(second == R"(1,converge,,,0,0,0,0,"{""failed"":true}")");
  CHECK(fnv1a_hex(csv) == fnv1a_hex(csv));
  CHECK(fnv1a_hex("").size() == 16);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("exit codes") {
  ExperimentReport r;
  CHECK(exit_code(r) == 0);
  r.gate_passed = false;
  CHECK(exit_code(r) == 2);
  r.diverged = true;
  CHECK(exit_code(r) == 3);
}

TEST_CASE("converge is reproducible and thread-count independent") {
  const Scenario s = parse_scenario(small_converge());
  const auto a = run_experiment(s, {1, std::nullopt});
  const auto b = run_experiment(s, {1, std::nullopt});
  const auto c = run_experiment(s, {4, std::nullopt});
  CHECK(a.rows.size() == 3);
  CHECK(report_csv(a) == report_csv(b));
  CHECK(report_csv(a) == report_csv(c));
  CHECK(a.reproducibility_hash == c.reproducibility_hash);
  CHECK(a.rows.front().epsilon == 0.1);
  for (const auto& row : a.rows) {
    CHECK(row.paths == 16);
    CHECK(row.value > 0.0);
    CHECK(std::isfinite(row.std_error));
  }
  const json j = report_json(a);
  CHECK(j.at("rows").size() == 3);
  CHECK(j.at("reproducibility_hash") == a.reproducibility_hash);
  CHECK(j.contains("gate"));
}

TEST_CASE("zero coupling makes the averaged path exact") {
  auto j = small_converge();
  j["system"]["params"]["a12"] = 0.0;
  const auto r = run_experiment(parse_scenario(j));
  for (const auto& row : r.rows) CHECK(row.value == 0.0);
  CHECK(r.gate_passed);
}

TEST_CASE("empty epsilon list is a usage error for the runners") {
  Scenario s = parse_scenario(small_converge());
  s.epsilons.clear();
  CHECK_THROWS_AS(run_converge(s), UsageError);
}

TEST_CASE("reports are written to disk") {
  const Scenario s = parse_scenario(small_converge());
  RunOptions o;
  const auto dir = std::filesystem::temp_directory_path() / "twoscale-harness-test";
  std::filesystem::remove_all(dir);
  o.dump_dir = dir / "paths";
  const auto r = run_experiment(s, o);
  write_report(r, dir);
  CHECK(slurp(dir / "report.csv") == report_csv(r));
  CHECK(json::parse(slurp(dir / "report.json")).at("experiment") == "converge");
  const auto dump = slurp(dir / "paths" / "small-e0-coupled_0.csv");
  CHECK(dump.rfind("t,x_1,y_1\n", 0) == 0);
  CHECK(std::filesystem::exists(dir / "paths" / "small-e0-averaged_0.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulate reports the averaged endpoint mean") {
  const auto s = parse_scenario(json::parse(R"({
    "name": "sim",
    "experiment": "simulate",
    "system": {"kind": "linear_benchmark"},
    "tau": 1.0,
    "T": 1.0,
    "h": 0.001,
    "paths": 2,
    "drift_source": "closed_form"
  })"));
  const auto r = run_experiment(s);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].value == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(2e-3));
  CHECK(r.rows[0].std_error == 0.0);
}

TEST_CASE("check flags a non-dissipative benchmark") {
  const auto good = parse_scenario(json::parse(R"({
    "name": "chk", "experiment": "check",
    "system": {"kind": "linear_benchmark"},
    "tau": 1.0, "seed": 1,
    "check": {"trials": 500, "candidate": [3.5, 0.5]}
  })"));
  const auto r = run_experiment(good);
  CHECK(r.rows.size() == 3);
  CHECK(r.gate_passed);

  auto bad_json = json::parse(R"({
    "name": "chk", "experiment": "check",
    "system": {"kind": "linear_benchmark", "params": {"c2": 0.5, "c3": 2}},
    "tau": 1.0, "seed": 1,
    "check": {"trials": 500}
  })");
  CHECK_FALSE(run_experiment(parse_scenario(bad_json)).gate_passed);
}
