#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "savic/experiment.hpp"

using namespace savic;
using namespace savic::experiment;
namespace fs = std::filesystem;

namespace {

json base_config() {
  return json::parse(R"({
    "problem": {
      "type": "quadratic", "M": 3, "d": 4, "seed": 7,
      "regime": "identical", "samples_per_worker": 1,
      "mu": 1.0, "L": 5.0, "noise_sigma": 0.5
    },
    "algorithm": {
      "name": "savic", "gamma": 0.02, "T": 40, "H": 4, "x0": 2.0,
      "preconditioner": {
        "rule": "linear", "clip": "max_clip", "alpha": 0.5, "gamma_cap": 10.0,
        "estimator": "hutchinson",
        "beta_schedule": {"kind": "constant", "beta": 0.9}
      }
    },
    "tuning": {"mode": "manual"},
    "ensemble": 1,
    "seed": 11,
    "threads": 1,
    "out": "out"
  })");
}

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("savic_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string write_config(const json& j, const std::string& tag) {
  const auto dir = temp_dir(tag + "_cfg");
  const auto path = fs::path(dir) / "config.json";
  std::ofstream out(path);
  out << j.dump(2);
  return path.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("unknown keys are rejected by name") {
  auto j = base_config();
  j["problem"]["bogus_knob"] = 3;
  try {
    ExperimentConfig::parse(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus_knob") != std::string::npos);
  }
}

TEST_CASE("missing required keys are named") {
  auto j = base_config();
  j["problem"].erase("mu");
  try {
    ExperimentConfig::parse(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("mu") != std::string::npos);
  }
}

TEST_CASE("malformed JSON file exits with a config error") {
  const auto dir = temp_dir("malformed");
  const auto path = fs::path(dir) / "bad.json";
  std::ofstream(path) << "{ not json";
  std::ostringstream log;
  CHECK(cmd_run(path.string(), {}, log) == kExitConfig);
  CHECK(log.str().find("config error") != std::string::npos);
}

TEST_CASE("cmd_run writes run.csv and summary.json") {
  auto j = base_config();
  const auto out = temp_dir("run_basic");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_run(write_config(j, "run_basic"), {}, log) == kExitOk);
  CHECK(fs::exists(fs::path(out) / "run.csv"));
  CHECK(fs::exists(fs::path(out) / "summary.json"));

  auto summary = json::parse(slurp(fs::path(out) / "summary.json"));
  CHECK(summary["effective"]["gamma"] == Catch::Approx(0.02));
  CHECK(summary["effective"]["H"] == 4);
  CHECK(summary["effective"]["alpha"] == Catch::Approx(0.5));
  CHECK(summary["effective"]["gamma_cap"] == Catch::Approx(10.0));
  CHECK(summary.contains("observed_max_grad_entry"));
  const std::string csv = slurp(fs::path(out) / "run.csv");
  CHECK(csv.rfind("t,phase,dist_sq,f_gap,V_t,d_min,d_max,growth_ok\n", 0) == 0);
}

TEST_CASE("identical configs give byte-identical outputs, threads included") {
  auto j = base_config();
  j["threads"] = 3;
  const auto out1 = temp_dir("det_a");
  const auto out2 = temp_dir("det_b");
  std::ostringstream log;
  j["out"] = out1;
  REQUIRE(cmd_run(write_config(j, "det_a"), {}, log) == kExitOk);
  j["out"] = out2;
  REQUIRE(cmd_run(write_config(j, "det_b"), {}, log) == kExitOk);
  CHECK(slurp(fs::path(out1) / "run.csv") == slurp(fs::path(out2) / "run.csv"));
}

TEST_CASE("ensembles write one CSV per member plus an aggregate") {
  auto j = base_config();
  j["ensemble"] = 4;
  j["threads"] = 2;
  const auto out = temp_dir("ensemble");
  j["out"] = out;
  std::ostringstream log;
  REQUIRE(cmd_run(write_config(j, "ensemble"), {}, log) == kExitOk);
  for (int k = 0; k < 4; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "run_%03d.csv", k);
    CHECK(fs::exists(fs::path(out) / name));
  }
  auto summary = json::parse(slurp(fs::path(out) / "summary.json"));
  REQUIRE(summary.contains("ensemble"));
  CHECK(summary["ensemble"]["n"] == 4);
  CHECK(summary["ensemble"].contains("final_dist_sq_mean"));
  CHECK(summary["ensemble"].contains("final_dist_sq_std"));
}

TEST_CASE("by_theory fills gamma, T and the momentum floor") {
  auto j = base_config();
  j["problem"]["noise_sigma"] = 1.0;
  j["algorithm"].erase("gamma");
  j["algorithm"].erase("T");
  j["algorithm"]["H"] = 1;
  j["tuning"] = {{"mode", "by_theory"}, {"t_slack", 1.0}};
  const auto out = temp_dir("by_theory");
  j["out"] = out;
  std::ostringstream log;
  REQUIRE(cmd_run(write_config(j, "by_theory"), {}, log) == kExitOk);
  auto summary = json::parse(slurp(fs::path(out) / "summary.json"));
  // alpha = 0.5, Gamma = 10, mu = 1, L = 5: kappa_hat = 100, a = 401.
  CHECK(summary["effective"]["gamma"] ==
        Catch::Approx(10.0 / 401.0).epsilon(1e-12));
  CHECK(summary["effective"]["T"] == 9615);
  const double floor = summary["effective"]["beta_floor"];
  CHECK(floor > 0.0);
  CHECK(floor < 1.0);
  CHECK(summary["effective"]["preconditioner"]["beta_schedule"]["kind"] ==
        "theory_driven");
}

TEST_CASE("sweep writes per-value directories and sweep.csv") {
  auto j = base_config();
  j["tuning"]["epsilon"] = 1e30;  // trivially reached at t = 0
  const auto out = temp_dir("sweep");
  j["out"] = out;
  std::ostringstream log;
  const auto cfg_path = write_config(j, "sweep");
  REQUIRE(cmd_sweep(cfg_path, "gamma", {"0.02", "0.01"}, {}, log) == kExitOk);
  CHECK(fs::exists(fs::path(out) / "gamma_0.02" / "run.csv"));
  CHECK(fs::exists(fs::path(out) / "gamma_0.01" / "run.csv"));
  const std::string sweep = slurp(fs::path(out) / "sweep.csv");
  CHECK(sweep.rfind("value,iterations_to_epsilon,final_f_gap,final_dist_sq\n", 0) == 0);
  CHECK(sweep.find("\n0.02,") != std::string::npos);
  CHECK(sweep.find("\n0.01,") != std::string::npos);

  SECTION("empty values exit with a config error") {
    std::ostringstream log2;
    CHECK(cmd_sweep(cfg_path, "gamma", {}, {}, log2) == kExitConfig);
  }
  SECTION("invalid axis for the algorithm exits with a config error") {
    std::ostringstream log2;
    CHECK(cmd_sweep(cfg_path, "tau", {"0.1"}, {}, log2) == kExitConfig);
  }
}

TEST_CASE("cmd_check passes on an admissible hutchinson run") {
  auto j = base_config();
  // Gamma = sqrt(d) L keeps every hutchinson probe admissible.
  j["algorithm"]["preconditioner"]["gamma_cap"] = std::sqrt(4.0) * 5.0;
  const auto out = temp_dir("check_ok");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_check(write_config(j, "check_ok"), {}, log) == kExitOk);
}

TEST_CASE("cmd_check passes with a theory_driven schedule") {
  auto j = base_config();
  j["problem"]["noise_sigma"] = 1.0;
  j["algorithm"].erase("gamma");
  j["algorithm"].erase("T");
  j["algorithm"]["preconditioner"]["gamma_cap"] = std::sqrt(4.0) * 5.0;
  j["tuning"] = {{"mode", "by_theory"}};
  const auto out = temp_dir("check_theory");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_check(write_config(j, "check_theory"), {}, log) == kExitOk);
}

TEST_CASE("cmd_check reports sandwich violations with exit 3") {
  // grad_square with a Gamma far below the observed gradient entries and
  // strict admissibility off: the raw diagonal outgrows Gamma.
  auto j = base_config();
  j["problem"]["noise_sigma"] = 0.0;
  j["algorithm"]["x0"] = 30.0;
  j["algorithm"]["preconditioner"] = {
      {"rule", "square"},         {"clip", "max_clip"},
      {"alpha", 0.05},            {"gamma_cap", 0.5},
      {"estimator", "grad_square"},
      {"beta_schedule", {{"kind", "adam"}, {"beta", 0.9}}},
      {"strict_admissible", false}};
  const auto out = temp_dir("check_viol");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_check(write_config(j, "check_viol"), {}, log) == kExitInvariant);
  CHECK(log.str().find("sandwich violated") != std::string::npos);
}

TEST_CASE("divergent configs exit with code 2") {
  auto j = base_config();
  j["algorithm"]["gamma"] = 100.0;
  j["algorithm"]["full_batch"] = true;
  const auto out = temp_dir("diverge");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_run(write_config(j, "diverge"), {}, log) == kExitDivergence);
}

TEST_CASE("seed override changes outputs, out override redirects them") {
  auto j = base_config();
  const auto out1 = temp_dir("ovr_a");
  const auto out2 = temp_dir("ovr_b");
  j["out"] = out1;
  const auto cfg_path = write_config(j, "ovr");
  std::ostringstream log;
  REQUIRE(cmd_run(cfg_path, {}, log) == kExitOk);
  CliOverrides o;
  o.out_dir = out2;
  o.seed = 999;
  REQUIRE(cmd_run(cfg_path, o, log) == kExitOk);
  CHECK(fs::exists(fs::path(out2) / "run.csv"));
  CHECK(slurp(fs::path(out1) / "run.csv") != slurp(fs::path(out2) / "run.csv"));
}

TEST_CASE("fedadagrad config parses and by_theory fills eta_l") {
  json j = json::parse(R"({
    "problem": {
      "type": "quadratic", "M": 4, "d": 3, "seed": 2,
      "regime": "identical", "mu": 1.0, "L": 2.0
    },
    "algorithm": {
      "name": "fedadagrad", "eta": 1.0, "tau": 0.1, "K": 5,
      "v_init": 1.0, "T": 30, "x0": 1.0, "full_batch": true
    },
    "tuning": {"mode": "by_theory", "G": 1.0},
    "out": "out"
  })");
  const auto out = temp_dir("fed");
  j["out"] = out;
  std::ostringstream log;
  REQUIRE(cmd_run(write_config(j, "fed"), {}, log) == kExitOk);
  auto summary = json::parse(slurp(fs::path(out) / "summary.json"));
  theory::FedAdaGradTheoryParams p;
  p.L = 2.0;
  p.G = 1.0;
  p.tau = 0.1;
  p.K = 5;
  p.T = 30;
  p.eta = 1.0;
  CHECK(summary["effective"]["eta_l"] ==
        Catch::Approx(theory::fedadagrad_eta_l(p)).epsilon(1e-12));
  CHECK(summary["effective"]["client_sampling"] == "uniform_without_replacement");
}

TEST_CASE("logreg_hetero problems drive end-to-end runs") {
  json j = json::parse(R"({
    "problem": {
      "type": "logreg_hetero", "M": 3, "d": 4, "seed": 5,
      "rows_per_worker": 12, "skew": 0.7, "lambda": 0.2
    },
    "algorithm": {
      "name": "savic", "gamma": 0.05, "T": 30, "H": 3, "x0": 0.0,
      "preconditioner": {
        "rule": "square", "clip": "add_clip", "alpha": 0.1, "gamma_cap": 5.0,
        "estimator": "grad_square",
        "beta_schedule": {"kind": "adam", "beta": 0.999}
      }
    },
    "out": "out"
  })");
  const auto out = temp_dir("logreg");
  j["out"] = out;
  std::ostringstream log;
  CHECK(cmd_run(write_config(j, "logreg"), {}, log) == kExitOk);
  auto summary = json::parse(slurp(fs::path(out) / "summary.json"));
  CHECK(summary["problem"]["regime"] == "heterogeneous");
  CHECK(summary["problem"]["sigma_dif_sq"].get<double>() > 0.0);
}

TEST_CASE("bounds flag appends the overlay column") {
  auto j = base_config();
  j["algorithm"]["gamma"] = 0.02;  // <= alpha/(4L) = 0.025
  const auto out = temp_dir("bounds");
  j["out"] = out;
  CliOverrides o;
  o.emit_bounds = true;
  std::ostringstream log;
  REQUIRE(cmd_run(write_config(j, "bounds"), o, log) == kExitOk);
  const std::string csv = slurp(fs::path(out) / "run.csv");
  CHECK(csv.rfind("t,phase,dist_sq,f_gap,V_t,d_min,d_max,growth_ok,bound\n", 0) == 0);
}
