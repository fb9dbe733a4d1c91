#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "savic/common.hpp"
#include "savic/engine.hpp"
#include "savic/precond.hpp"
#include "savic/problems.hpp"
#include "savic/theory.hpp"

namespace savic::experiment {

using nlohmann::json;

// Exit codes shared with the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitInvariant = 3;

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

namespace detail {

inline void require_keys(const json& j, const std::string& ctx,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T get_req(const json& j, const std::string& ctx, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(ctx + ": missing required key '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": key '" + std::string(key) + "' has the wrong type");
  }
}

template <typename T>
T get_opt(const json& j, const std::string& ctx, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": key '" + std::string(key) + "' has the wrong type");
  }
}

}  // namespace detail

struct ProblemSpec {
  std::string type;  // "quadratic" | "logreg_hetero"
  problems::QuadraticSuiteSpec quad;
  problems::HeteroLogRegSpec logreg;

  static ProblemSpec parse(const json& j) {
    ProblemSpec out;
    out.type = detail::get_req<std::string>(j, "problem", "type");
    if (out.type == "quadratic") {
      detail::require_keys(j, "problem",
                           {"type", "M", "d", "seed", "regime", "samples_per_worker",
                            "mu", "L", "noise_sigma", "orthogonal_basis",
                            "worker_shift", "sample_spread", "base_scale"});
      auto& q = out.quad;
      q.M = detail::get_req<std::size_t>(j, "problem", "M");
      q.d = detail::get_req<std::size_t>(j, "problem", "d");
      q.seed = detail::get_opt<std::uint64_t>(j, "problem", "seed", 0);
      const auto regime = detail::get_opt<std::string>(j, "problem", "regime", "identical");
      if (regime == "identical") q.regime = problems::Regime::identical;
      else if (regime == "heterogeneous") q.regime = problems::Regime::heterogeneous;
      else throw ConfigError("problem: unknown regime '" + regime + "'");
      q.samples_per_worker =
          detail::get_opt<std::size_t>(j, "problem", "samples_per_worker", 1);
      q.mu = detail::get_req<double>(j, "problem", "mu");
      q.L = detail::get_req<double>(j, "problem", "L");
      q.noise_sigma = detail::get_opt<double>(j, "problem", "noise_sigma", 0.0);
      q.orthogonal_basis = detail::get_opt<bool>(j, "problem", "orthogonal_basis", true);
      q.worker_shift = detail::get_opt<double>(j, "problem", "worker_shift", 1.0);
      q.sample_spread = detail::get_opt<double>(j, "problem", "sample_spread", 0.0);
      q.base_scale = detail::get_opt<double>(j, "problem", "base_scale", 1.0);
    } else if (out.type == "logreg_hetero") {
      detail::require_keys(j, "problem",
                           {"type", "M", "d", "seed", "rows_per_worker", "skew",
                            "lambda", "center_scale", "within_noise"});
      auto& lr = out.logreg;
      lr.M = detail::get_req<std::size_t>(j, "problem", "M");
      lr.d = detail::get_req<std::size_t>(j, "problem", "d");
      lr.seed = detail::get_opt<std::uint64_t>(j, "problem", "seed", 0);
      lr.rows_per_worker = detail::get_req<std::size_t>(j, "problem", "rows_per_worker");
      lr.skew = detail::get_req<double>(j, "problem", "skew");
      lr.lambda = detail::get_req<double>(j, "problem", "lambda");
      lr.center_scale = detail::get_opt<double>(j, "problem", "center_scale", 2.0);
      lr.within_noise = detail::get_opt<double>(j, "problem", "within_noise", 0.5);
    } else {
      throw ConfigError("problem: unknown type '" + out.type + "'");
    }
    return out;
  }

  problems::ProblemSuite build() const {
    if (type == "quadratic") return problems::make_quadratic_suite(quad);
    return problems::generate_heterogeneous(logreg);
  }

  std::size_t M() const { return type == "quadratic" ? quad.M : logreg.M; }
  std::size_t d() const { return type == "quadratic" ? quad.d : logreg.d; }
};

struct AlgorithmSpec {
  std::string name;  // "savic" | "minibatch_sgd" | "fedadagrad"
  engine::SavicConfig savic;   // also used by minibatch_sgd
  engine::FedAdaGradConfig fedadagrad;
  double x0_fill = 1.0;
  std::optional<Vector> x0_vector;
  bool gamma_given = false;
  bool t_given = false;

  static AlgorithmSpec parse(const json& j) {
    AlgorithmSpec out;
    out.name = detail::get_req<std::string>(j, "algorithm", "name");
    const std::string ctx = "algorithm";
    if (out.name == "savic" || out.name == "minibatch_sgd") {
      detail::require_keys(j, ctx,
                           {"name", "gamma", "T", "H", "sync_times", "batch_size",
                            "full_batch", "momentum", "scaling_mode", "x0",
                            "preconditioner"});
      auto& s = out.savic;
      out.gamma_given = j.contains("gamma");
      out.t_given = j.contains("T");
      s.gamma = detail::get_opt<double>(j, ctx, "gamma", 0.1);
      s.T = detail::get_opt<std::size_t>(j, ctx, "T", 100);
      if (j.contains("H") && j.contains("sync_times")) {
        throw ConfigError("algorithm: give either 'H' or 'sync_times', not both");
      }
      if (j.contains("sync_times")) {
        s.schedule = engine::SyncSchedule::explicit_times(
            detail::get_req<std::vector<std::size_t>>(j, ctx, "sync_times"));
      } else {
        s.schedule = engine::SyncSchedule::fixed_gap(
            detail::get_opt<std::size_t>(j, ctx, "H", 1));
      }
      s.batch_size = detail::get_opt<std::size_t>(j, ctx, "batch_size", 1);
      s.full_batch = detail::get_opt<bool>(j, ctx, "full_batch", false);
      s.momentum = detail::get_opt<double>(j, ctx, "momentum", 0.0);
      const auto mode = detail::get_opt<std::string>(j, ctx, "scaling_mode", "global");
      if (mode == "global") s.scaling_mode = engine::ScalingMode::global;
      else if (mode == "local_experimental") {
        s.scaling_mode = engine::ScalingMode::local_experimental;
      } else {
        throw ConfigError("algorithm: unknown scaling_mode '" + mode + "'");
      }
      if (j.contains("preconditioner")) {
        out.savic.precond = precond::precond_config_from_json(j.at("preconditioner"));
      }
    } else if (out.name == "fedadagrad") {
      detail::require_keys(j, ctx,
                           {"name", "eta", "eta_l", "tau", "beta1", "K", "v_init",
                            "T", "participation", "batch_size", "full_batch", "x0"});
      auto& f = out.fedadagrad;
      f.eta = detail::get_req<double>(j, ctx, "eta");
      f.eta_l = detail::get_opt<double>(j, ctx, "eta_l", 0.0);
      f.tau = detail::get_req<double>(j, ctx, "tau");
      f.beta1 = detail::get_opt<double>(j, ctx, "beta1", 0.0);
      f.K = detail::get_req<std::size_t>(j, ctx, "K");
      f.v_init = detail::get_req<double>(j, ctx, "v_init");
      f.T = detail::get_req<std::size_t>(j, ctx, "T");
      f.participation = detail::get_opt<double>(j, ctx, "participation", 1.0);
      f.batch_size = detail::get_opt<std::size_t>(j, ctx, "batch_size", 1);
      f.full_batch = detail::get_opt<bool>(j, ctx, "full_batch", false);
    } else {
      throw ConfigError("algorithm: unknown name '" + out.name + "'");
    }
    if (j.contains("x0")) {
      const auto& x0 = j.at("x0");
      if (x0.is_number()) {
        out.x0_fill = x0.get<double>();
      } else if (x0.is_array()) {
        out.x0_vector = x0.get<Vector>();
      } else {
        throw ConfigError("algorithm: 'x0' must be a number or an array");
      }
    }
    return out;
  }

  Vector initial_point(std::size_t d) const {
    if (x0_vector.has_value()) {
      check_dim(*x0_vector, d, "x0");
      return *x0_vector;
    }
    return filled(d, x0_fill);
  }
};

struct TuningSpec {
  bool by_theory = false;
  double t_slack = 1.0;
  double grad_bound = 1.0;  // G for the fedadagrad rate
  std::optional<double> epsilon;

  static TuningSpec parse(const json& j) {
    detail::require_keys(j, "tuning", {"mode", "t_slack", "G", "epsilon"});
    TuningSpec out;
    const auto mode = detail::get_opt<std::string>(j, "tuning", "mode", "manual");
    if (mode == "by_theory") out.by_theory = true;
    else if (mode != "manual") throw ConfigError("tuning: unknown mode '" + mode + "'");
    out.t_slack = detail::get_opt<double>(j, "tuning", "t_slack", 1.0);
    out.grad_bound = detail::get_opt<double>(j, "tuning", "G", 1.0);
    if (j.contains("epsilon")) {
      out.epsilon = detail::get_req<double>(j, "tuning", "epsilon");
    }
    return out;
  }
};

struct ExperimentConfig {
  ProblemSpec problem;
  AlgorithmSpec algorithm;
  TuningSpec tuning;
  std::size_t ensemble = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = "out";

  static ExperimentConfig parse(const json& j) {
    detail::require_keys(j, "config",
                         {"problem", "algorithm", "tuning", "ensemble", "seed",
                          "threads", "out"});
    ExperimentConfig cfg;
    if (!j.contains("problem") || !j.contains("algorithm")) {
      throw ConfigError("config: 'problem' and 'algorithm' sections are required");
    }
    cfg.problem = ProblemSpec::parse(j.at("problem"));
    cfg.algorithm = AlgorithmSpec::parse(j.at("algorithm"));
    if (j.contains("tuning")) cfg.tuning = TuningSpec::parse(j.at("tuning"));
    cfg.ensemble = detail::get_opt<std::size_t>(j, "config", "ensemble", 1);
    if (cfg.ensemble < 1) throw ConfigError("config: ensemble must be >= 1");
    cfg.seed = detail::get_opt<std::uint64_t>(j, "config", "seed", 0);
    cfg.threads = detail::get_opt<int>(j, "config", "threads", 1);
    cfg.out_dir = detail::get_opt<std::string>(j, "config", "out", "out");
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config: malformed JSON in '" + path + "': " + e.what());
    }
    return parse(j);
  }
};

// ---------------------------------------------------------------------------
// Theory-driven resolution
// ---------------------------------------------------------------------------

/// A config with every effective parameter pinned: what actually runs.
struct ResolvedExperiment {
  ExperimentConfig cfg;
  problems::ProblemSuite suite;
  double beta_floor_used = -1.0;  // < 0: not theory-driven
  double sigma_dif_sq = 0.0;
  Vector x_star;
  double f_star = 0.0;
  double initial_f_gap = 0.0;

  double epsilon() const {
    if (cfg.tuning.epsilon.has_value()) return *cfg.tuning.epsilon;
    return 1e-3 * initial_f_gap;
  }
};

inline theory::RateParams rate_params_for(const ExperimentConfig& cfg,
                                          const problems::ProblemSuite& suite,
                                          double sigma_dif_sq_val,
                                          std::size_t horizon_hint) {
  theory::RateParams p;
  p.mu = suite.mu();
  p.L = suite.smoothness();
  const auto& pc = cfg.algorithm.savic.precond;
  p.alpha = pc.rule == precond::Rule::identity ? 1.0 : pc.alpha;
  p.gamma_cap = pc.rule == precond::Rule::identity ? 1.0 : pc.gamma_cap;
  p.sigma_sq = suite.noise_sigma() * suite.noise_sigma();
  p.sigma_dif_sq = sigma_dif_sq_val;
  p.M = suite.num_workers();
  p.H = cfg.algorithm.savic.schedule.max_gap(horizon_hint);
  p.d = suite.dim();
  return p;
}

/// Builds the suite and, in by_theory mode, fills gamma, T and the momentum
/// floor from the rate statements before anything runs.
inline ResolvedExperiment resolve(ExperimentConfig cfg) {
  problems::ProblemSuite suite = cfg.problem.build();
  const auto [x_star, f_star] = problems::exact_optimum(suite);
  const double sdif = problems::sigma_dif_sq(suite, x_star);

  if (cfg.algorithm.name == "savic" || cfg.algorithm.name == "minibatch_sgd") {
    auto& s = cfg.algorithm.savic;
    s.x0 = cfg.algorithm.initial_point(suite.dim());
    if (cfg.tuning.by_theory) {
      theory::RateParams p = rate_params_for(cfg, suite, sdif, s.T);
      if (cfg.algorithm.name == "minibatch_sgd") p.H = 1;
      if (suite.regime() == problems::Regime::identical ||
          cfg.algorithm.name == "minibatch_sgd") {
        if (cfg.algorithm.gamma_given) {
          // Pinned gamma (e.g. a gamma sweep): derive the matching horizon
          // a = Gamma/(mu*gamma), T = ceil(4 a ln a).
          const double a = p.gamma_cap / (p.mu * s.gamma);
          if (!(a > 1.0)) throw ConfigError("tuning: pinned gamma too large for by_theory");
          s.T = static_cast<std::size_t>(std::ceil(4.0 * a * std::log(a)));
        } else {
          const auto pres = theory::step_size_identical(p, cfg.tuning.t_slack);
          s.gamma = pres.gamma;
          if (!cfg.algorithm.t_given) s.T = pres.T;
        }
      } else {
        if (!cfg.algorithm.t_given) {
          throw ConfigError("tuning: heterogeneous by_theory needs an explicit T");
        }
        if (!cfg.algorithm.gamma_given) {
          const double r0 = dist_sq(s.x0, x_star);
          s.gamma = theory::step_size_hetero(p, s.T, r0);
        }
      }
      if (s.precond.rule != precond::Rule::identity) {
        s.precond.beta_schedule =
            precond::BetaSchedule::theory_driven(s.gamma, suite.mu());
      }
    }
  } else {
    auto& f = cfg.algorithm.fedadagrad;
    f.x0 = cfg.algorithm.initial_point(suite.dim());
    if (cfg.tuning.by_theory) {
      theory::FedAdaGradTheoryParams p;
      p.L = suite.smoothness();
      p.G = cfg.tuning.grad_bound;
      p.tau = f.tau;
      p.K = f.K;
      p.T = f.T;
      p.eta = f.eta;
      f.eta_l = theory::fedadagrad_eta_l(p);
    }
  }

  ResolvedExperiment r{std::move(cfg), std::move(suite)};
  r.x_star = x_star;
  r.f_star = f_star;
  r.sigma_dif_sq = sdif;
  if (r.cfg.algorithm.name != "fedadagrad") {
    const auto& s = r.cfg.algorithm.savic;
    if (s.precond.rule != precond::Rule::identity &&
        s.precond.beta_schedule.kind == precond::BetaSchedule::Kind::theory_driven) {
      r.beta_floor_used = precond::beta_floor(
          s.precond.rule, s.precond.beta_schedule.gamma,
          s.precond.beta_schedule.mu, s.precond.alpha, s.precond.gamma_cap);
    }
    r.initial_f_gap = r.suite.global_loss(s.x0) - f_star;
  } else {
    r.initial_f_gap =
        r.suite.global_loss(r.cfg.algorithm.fedadagrad.x0) - f_star;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t member_seed(std::uint64_t master, std::size_t k) {
  if (k == 0) return master;
  return mix64(master + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(k));
}

inline engine::RunRecord run_member(const ResolvedExperiment& r,
                                    std::uint64_t seed, int engine_threads) {
  const auto& alg = r.cfg.algorithm;
  if (alg.name == "savic") {
    engine::SavicConfig c = alg.savic;
    c.master_seed = seed;
    return engine::run_savic(r.suite, c, engine_threads);
  }
  if (alg.name == "minibatch_sgd") {
    engine::SavicConfig c = alg.savic;
    c.master_seed = seed;
    return engine::run_minibatch_sgd(r.suite, c, engine_threads);
  }
  engine::FedAdaGradConfig c = alg.fedadagrad;
  c.master_seed = seed;
  return engine::run_fedadagrad(r.suite, c, engine_threads);
}

inline json effective_params(const ResolvedExperiment& r) {
  json eff;
  const auto& alg = r.cfg.algorithm;
  if (alg.name != "fedadagrad") {
    const auto& s = alg.savic;
    eff["algorithm"] = alg.name;
    eff["gamma"] = s.gamma;
    eff["T"] = s.T;
    eff["H"] = s.schedule.max_gap(s.T);
    eff["alpha"] = s.precond.rule == precond::Rule::identity ? 1.0 : s.precond.alpha;
    eff["gamma_cap"] =
        s.precond.rule == precond::Rule::identity ? 1.0 : s.precond.gamma_cap;
    eff["beta_floor"] = r.beta_floor_used;
    eff["momentum"] = s.momentum;
    eff["batch_size"] = s.batch_size;
    eff["full_batch"] = s.full_batch;
    eff["scaling_mode"] = s.scaling_mode == engine::ScalingMode::global
                              ? "global"
                              : "local_experimental";
    eff["preconditioner"] = precond::to_json(s.precond);
  } else {
    const auto& f = alg.fedadagrad;
    eff["algorithm"] = "fedadagrad";
    eff["eta"] = f.eta;
    eff["eta_l"] = f.eta_l;
    eff["tau"] = f.tau;
    eff["beta1"] = f.beta1;
    eff["K"] = f.K;
    eff["v_init"] = f.v_init;
    eff["T"] = f.T;
    eff["participation"] = f.participation;
    eff["client_sampling"] = "uniform_without_replacement";
  }
  return eff;
}

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

struct RunOutcome {
  int exit_code = kExitOk;
  std::vector<engine::RunRecord> members;
  json summary;
};

/// Executes the resolved experiment (all ensemble members) and writes
/// run CSVs plus summary.json into out_dir. Members may run concurrently;
/// files are written after the join barrier, in member order.
inline RunOutcome execute(const ResolvedExperiment& r, bool emit_bounds = false) {
  namespace fs = std::filesystem;
  const auto& cfg = r.cfg;
  fs::create_directories(cfg.out_dir);

  const std::size_t n = cfg.ensemble;
  RunOutcome out;
  out.members.resize(n);
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t k = 0; k < n; ++k) seeds[k] = detail::member_seed(cfg.seed, k);

  const int engine_threads = n > 1 ? 1 : cfg.threads;
  if (cfg.threads > 1 && n > 1) {
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(cfg.threads, n);
    for (std::size_t w = 0; w < n_threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < n; k += n_threads) {
          out.members[k] = detail::run_member(r, seeds[k], 1);
        }
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      out.members[k] = detail::run_member(r, seeds[k], engine_threads);
    }
  }

  // Optional bound overlay (identical-data shape curve with unit constants).
  std::optional<std::vector<double>> bounds;
  if (emit_bounds && cfg.algorithm.name != "fedadagrad") {
    const auto& s = cfg.algorithm.savic;
    theory::RateParams p = rate_params_for(cfg, r.suite, r.sigma_dif_sq, s.T);
    const double r0 = dist_sq(s.x0, r.x_star);
    try {
      bounds = theory::bound_curve_identical(p, s.gamma, s.T, r0);
    } catch (const ConfigError&) {
      bounds.reset();  // gamma outside the bound's precondition: skip overlay
    }
  }

  char namebuf[32];
  for (std::size_t k = 0; k < n; ++k) {
    std::string name = "run.csv";
    if (n > 1) {
      std::snprintf(namebuf, sizeof(namebuf), "run_%03zu.csv", k);
      name = namebuf;
    }
    std::ofstream csv(fs::path(cfg.out_dir) / name, std::ios::binary);
    out.members[k].write_csv(csv, bounds.has_value() ? &*bounds : nullptr);
  }

  std::vector<double> finals_dist, finals_fgap;
  double max_grad = 0.0;
  bool any_diverged = false;
  for (const auto& m : out.members) {
    finals_dist.push_back(m.final_dist_sq());
    finals_fgap.push_back(m.final_f_gap());
    max_grad = std::max(max_grad, m.observed_max_grad_entry);
    any_diverged = any_diverged || m.diverged;
  }

  json summary;
  summary["effective"] = detail::effective_params(r);
  summary["problem"] = {{"type", cfg.problem.type},
                        {"M", r.suite.num_workers()},
                        {"d", r.suite.dim()},
                        {"regime", r.suite.regime() == problems::Regime::identical
                                       ? "identical"
                                       : "heterogeneous"},
                        {"mu", r.suite.mu()},
                        {"L", r.suite.smoothness()},
                        {"noise_sigma", r.suite.noise_sigma()},
                        {"sigma_dif_sq", r.sigma_dif_sq}};
  summary["seed"] = cfg.seed;
  summary["threads"] = cfg.threads;
  summary["observed_max_grad_entry"] = max_grad;
  summary["initial_f_gap"] = r.initial_f_gap;
  summary["final"] = out.members.front().final_metrics(r.epsilon());
  if (n > 1) {
    json ens;
    ens["n"] = n;
    ens["member_seeds"] = seeds;
    ens["final_dist_sq_mean"] = detail::mean_of(finals_dist);
    ens["final_dist_sq_std"] = detail::stddev_of(finals_dist);
    ens["final_f_gap_mean"] = detail::mean_of(finals_fgap);
    ens["final_f_gap_std"] = detail::stddev_of(finals_fgap);
    summary["ensemble"] = std::move(ens);
  }

  out.summary = std::move(summary);
  {
    std::ofstream sj(fs::path(cfg.out_dir) / "summary.json", std::ios::binary);
    sj << out.summary.dump(2) << '\n';
  }
  out.exit_code = any_diverged ? kExitDivergence : kExitOk;
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct CliOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool emit_bounds = false;
};

inline void apply_overrides(ExperimentConfig& cfg, const CliOverrides& o) {
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
}

inline int cmd_run(const std::string& config_path, const CliOverrides& o,
                   std::ostream& log) {
  try {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    apply_overrides(cfg, o);
    ResolvedExperiment r = resolve(std::move(cfg));
    RunOutcome out = execute(r, o.emit_bounds);
    log << "run: wrote " << r.cfg.out_dir << "/summary.json ("
        << r.cfg.ensemble << " member" << (r.cfg.ensemble > 1 ? "s" : "")
        << ")\n";
    if (out.exit_code == kExitDivergence) {
      for (std::size_t k = 0; k < out.members.size(); ++k) {
        if (out.members[k].diverged) {
          log << "run: member " << k << " diverged at t = "
              << out.members[k].divergence_t << "\n";
        }
      }
    }
    return out.exit_code;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
}

enum class SweepAxis { gamma, tau, H, M, skew };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "gamma") return SweepAxis::gamma;
  if (s == "tau") return SweepAxis::tau;
  if (s == "H") return SweepAxis::H;
  if (s == "M") return SweepAxis::M;
  if (s == "skew") return SweepAxis::skew;
  throw ConfigError("sweep: unknown axis '" + s + "'");
}

namespace detail {

inline void apply_axis(ExperimentConfig& cfg, SweepAxis axis,
                       const std::string& token) {
  double value = 0.0;
  try {
    value = std::stod(token);
  } catch (...) {
    throw ConfigError("sweep: value '" + token + "' is not a number");
  }
  switch (axis) {
    case SweepAxis::gamma:
      if (cfg.algorithm.name == "fedadagrad") {
        throw ConfigError("sweep: gamma axis needs savic or minibatch_sgd");
      }
      cfg.algorithm.savic.gamma = value;
      cfg.algorithm.gamma_given = true;
      break;
    case SweepAxis::tau:
      if (cfg.algorithm.name != "fedadagrad") {
        throw ConfigError("sweep: tau axis needs fedadagrad");
      }
      cfg.algorithm.fedadagrad.tau = value;
      break;
    case SweepAxis::H:
      if (cfg.algorithm.name == "fedadagrad") {
        cfg.algorithm.fedadagrad.K = static_cast<std::size_t>(value);
      } else {
        cfg.algorithm.savic.schedule =
            engine::SyncSchedule::fixed_gap(static_cast<std::size_t>(value));
      }
      break;
    case SweepAxis::M:
      if (cfg.problem.type == "quadratic") {
        cfg.problem.quad.M = static_cast<std::size_t>(value);
      } else {
        cfg.problem.logreg.M = static_cast<std::size_t>(value);
      }
      break;
    case SweepAxis::skew:
      if (cfg.problem.type != "logreg_hetero") {
        throw ConfigError("sweep: skew axis needs a logreg_hetero problem");
      }
      cfg.problem.logreg.skew = value;
      break;
  }
}

}  // namespace detail

/// One subdirectory per value plus sweep.csv with per-value outcome columns.
inline int cmd_sweep(const std::string& config_path, const std::string& axis_str,
                     const std::vector<std::string>& values,
                     const CliOverrides& o, std::ostream& log) {
  namespace fs = std::filesystem;
  try {
    if (values.empty()) throw ConfigError("sweep: empty values list");
    const SweepAxis axis = parse_axis(axis_str);
    ExperimentConfig base = ExperimentConfig::load(config_path);
    apply_overrides(base, o);
    fs::create_directories(base.out_dir);

    std::string sweep_csv = "value,iterations_to_epsilon,final_f_gap,final_dist_sq\n";
    int exit_code = kExitOk;
    for (const std::string& token : values) {
      ExperimentConfig cfg = base;
      detail::apply_axis(cfg, axis, token);
      cfg.out_dir = (fs::path(base.out_dir) / (axis_str + "_" + token)).string();
      ResolvedExperiment r = resolve(std::move(cfg));
      RunOutcome out = execute(r, o.emit_bounds);
      if (out.exit_code != kExitOk) exit_code = out.exit_code;

      // Aggregate over members; a member that never reaches epsilon makes the
      // column -1.
      const double eps = r.epsilon();
      double iters_mean = 0.0;
      bool reached = true;
      std::vector<double> fgaps, dists;
      for (const auto& m : out.members) {
        const std::size_t it = m.iterations_to_epsilon(eps);
        if (it == engine::RunRecord::kNotReached) reached = false;
        else iters_mean += static_cast<double>(it);
        fgaps.push_back(m.final_f_gap());
        dists.push_back(m.final_dist_sq());
      }
      iters_mean = reached ? iters_mean / static_cast<double>(out.members.size())
                           : -1.0;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", token.c_str(),
                    iters_mean, detail::mean_of(fgaps), detail::mean_of(dists));
      sweep_csv += buf;
      log << "sweep: " << axis_str << " = " << token
          << " -> iterations_to_epsilon = " << iters_mean << "\n";
    }
    std::ofstream scsv(fs::path(base.out_dir) / "sweep.csv", std::ios::binary);
    scsv << sweep_csv;
    return exit_code;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
}

/// Runs the configured experiment and verifies the spectral sandwich, growth,
/// sync-consensus and dispersion invariants over the produced record.
inline int cmd_check(const std::string& config_path, const CliOverrides& o,
                     std::ostream& log) {
  try {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    apply_overrides(cfg, o);
    cfg.ensemble = 1;
    ResolvedExperiment r = resolve(std::move(cfg));
    engine::RunRecord rec = detail::run_member(r, r.cfg.seed, r.cfg.threads);

    std::size_t violations = 0;
    const bool is_savic = r.cfg.algorithm.name == "savic";
    const auto& pc = r.cfg.algorithm.savic.precond;
    for (const auto& row : rec.rows) {
      if (is_savic) {
        const double lo = pc.alpha - 1e-12;
        const double hi = pc.certified_upper() + 1e-12;
        if (row.d_min < lo || row.d_max > hi) {
          log << "row " << row.t << ": sandwich violated (d_min = " << row.d_min
              << ", d_max = " << row.d_max << ")\n";
          ++violations;
        }
        if (!row.growth_ok) {
          log << "row " << row.t << ": growth bound violated\n";
          ++violations;
        }
      }
      if (row.phase == engine::Phase::sync && row.consensus_dev != 0.0) {
        log << "row " << row.t << ": sync consensus violated (dev = "
            << row.consensus_dev << ")\n";
        ++violations;
      }
      if (row.V < 0.0 ||
          (row.phase == engine::Phase::sync && row.V != 0.0)) {
        log << "row " << row.t << ": dispersion invariant violated (V = "
            << row.V << ")\n";
        ++violations;
      }
    }
    if (rec.diverged) {
      log << "check: run diverged at t = " << rec.divergence_t << "\n";
      return kExitDivergence;
    }
    if (violations > 0) {
      log << "check: " << violations << " violation(s)\n";
      return kExitInvariant;
    }
    log << "check: all invariants hold over " << rec.rows.size() << " rows\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace savic::experiment
