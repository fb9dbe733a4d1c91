#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include <json.hpp>

#include "savic/common.hpp"
#include "savic/problems.hpp"
#include "savic/rng.hpp"

namespace savic::precond {

enum class Rule { square, linear, identity };
enum class Clip { max_clip, add_clip };
enum class Estimator { grad_square, hutchinson };

inline const char* to_string(Rule r) {
  switch (r) {
    case Rule::square: return "square";
    case Rule::linear: return "linear";
    default: return "identity";
  }
}
inline const char* to_string(Clip c) {
  return c == Clip::max_clip ? "max_clip" : "add_clip";
}
inline const char* to_string(Estimator e) {
  return e == Estimator::grad_square ? "grad_square" : "hutchinson";
}

/// Minimal admissible preconditioning momentum for a given step size: below
/// this floor the norm-change factor between consecutive scaled norms exceeds
/// what the convergence analysis tolerates.
///   square rule: 1 - gamma*mu*alpha^2/Gamma^3
///   linear rule: 1 - gamma*mu*alpha/(4*Gamma^2)
/// Clamped into [0, 1]. The identity rule has no constraint (returns 0).
inline double beta_floor(Rule rule, double gamma, double mu, double alpha,
                         double gamma_cap) {
  if (rule == Rule::identity) return 0.0;
  if (!(gamma > 0.0) || !(mu > 0.0) || !(alpha > 0.0) || !(gamma_cap > 0.0)) {
    throw ConfigError("beta_floor: all inputs must be positive");
  }
  double floor;
  if (rule == Rule::square) {
    floor = 1.0 - gamma * mu * alpha * alpha / (gamma_cap * gamma_cap * gamma_cap);
  } else {
    floor = 1.0 - gamma * mu * alpha / (4.0 * gamma_cap * gamma_cap);
  }
  return std::clamp(floor, 0.0, 1.0);
}

struct BetaSchedule {
  enum class Kind { constant, adam, theory_driven };
  Kind kind = Kind::constant;
  double beta = 0.999;  // constant / adam base
  double gamma = 0.0;   // theory_driven
  double mu = 0.0;      // theory_driven

  static BetaSchedule constant(double b) { return {Kind::constant, b, 0, 0}; }
  static BetaSchedule adam(double b) { return {Kind::adam, b, 0, 0}; }
  static BetaSchedule theory_driven(double gamma, double mu) {
    return {Kind::theory_driven, 0.0, gamma, mu};
  }

  /// Momentum for the t-th update (t counts updates from 0). The adam
  /// schedule is the bias-corrected recursion: the first update has beta 0.
  double value(Rule rule, double alpha, double gamma_cap, std::size_t t) const {
    switch (kind) {
      case Kind::constant:
        return beta;
      case Kind::adam: {
        if (beta >= 1.0) return 1.0;
        const double bp = std::pow(beta, static_cast<double>(t) + 1.0);
        return (beta - bp) / (1.0 - bp);
      }
      case Kind::theory_driven:
      default:
        return beta_floor(rule, gamma, mu, alpha, gamma_cap);
    }
  }

  void validate() const {
    if (kind == Kind::theory_driven) {
      if (!(gamma > 0.0) || !(mu > 0.0)) {
        throw ConfigError("beta schedule: theory_driven needs gamma > 0 and mu > 0");
      }
      return;
    }
    if (beta < 0.0 || beta > 1.0) {
      throw ConfigError("beta schedule: beta must lie in [0, 1]");
    }
  }
};

struct PrecondConfig {
  Rule rule = Rule::identity;
  Clip clip = Clip::max_clip;
  double alpha = 1.0;
  double gamma_cap = 1.0;
  BetaSchedule beta_schedule = BetaSchedule::constant(0.999);
  Estimator estimator = Estimator::grad_square;
  /// Clamp grad_square entries to Gamma^2 (Gamma for the linear rule) before
  /// they enter the recurrence, keeping the run inside the regime the
  /// spectral lemmas assume. Off by default: the unclamped mode is practical
  /// Adam/RMSProp.
  bool strict_admissible = false;
  /// Initial raw diagonal value; defaults to alpha when <= 0.
  double d0_value = 0.0;

  double d0() const { return d0_value > 0.0 ? d0_value : alpha; }

  /// Certified elementwise ceiling on the clipped diagonal: Gamma for
  /// max_clip, Gamma + alpha for add_clip.
  double certified_upper() const {
    return clip == Clip::add_clip ? gamma_cap + alpha : gamma_cap;
  }

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("preconditioner: alpha must be > 0");
    if (!(gamma_cap >= alpha)) {
      throw ConfigError("preconditioner: gamma_cap must be >= alpha");
    }
    beta_schedule.validate();
  }
};

/// Raw diagonal D^t plus its positive-definite clipping D-hat^t.
/// The recurrence runs on the raw diagonal; clipping is recomputed after
/// every update as a derived view.
class DiagPrecondState {
 public:
  DiagPrecondState(PrecondConfig cfg, std::size_t d)
      : cfg_(std::move(cfg)), raw_(filled(d, cfg_.d0())) {
    cfg_.validate();
    if (cfg_.rule != Rule::identity && cfg_.d0() > cfg_.gamma_cap) {
      throw ConfigError("preconditioner: d0 must lie in [alpha, gamma_cap]");
    }
    reclip();
  }

  /// Restores a checkpointed state (raw diagonal + update counter).
  DiagPrecondState(PrecondConfig cfg, Vector raw, std::size_t step_index)
      : cfg_(std::move(cfg)), step_index_(step_index), raw_(std::move(raw)) {
    cfg_.validate();
    reclip();
  }

  const PrecondConfig& config() const { return cfg_; }
  std::size_t dim() const { return raw_.size(); }
  std::size_t step_index() const { return step_index_; }
  const Vector& raw() const { return raw_; }
  const Vector& clipped() const { return clipped_; }

  /// Applies one recurrence step with the scheduled momentum and returns the
  /// beta that was used. For the square rule h_diag holds the entries of
  /// (H^t)^2 and must be nonnegative.
  double update(const Vector& h_diag) {
    const double beta = cfg_.beta_schedule.value(cfg_.rule, cfg_.alpha,
                                                 cfg_.gamma_cap, step_index_);
    update_with_beta(h_diag, beta);
    return beta;
  }

  /// Same recurrence with an explicit momentum (fuzzing hook).
  void update_with_beta(const Vector& h_diag, double beta) {
    if (cfg_.rule == Rule::identity) {
      step_index_ += 1;
      return;
    }
    check_dim(h_diag, raw_.size(), "precond update");
    if (beta < 0.0 || beta > 1.0) {
      throw ContractError("precond update: beta outside [0, 1]");
    }
    if (cfg_.rule == Rule::square) {
      for (std::size_t i = 0; i < raw_.size(); ++i) {
        if (h_diag[i] < 0.0) {
          throw ContractError("precond update: squared H entries must be nonnegative");
        }
        raw_[i] = std::sqrt(beta * raw_[i] * raw_[i] + (1.0 - beta) * h_diag[i]);
      }
    } else {
      for (std::size_t i = 0; i < raw_.size(); ++i) {
        raw_[i] = beta * raw_[i] + (1.0 - beta) * h_diag[i];
      }
    }
    reclip();
    step_index_ += 1;
  }

 private:
  void reclip() {
    if (cfg_.rule == Rule::identity) {
      clipped_ = ones(raw_.size());
      return;
    }
    clipped_.resize(raw_.size());
    if (cfg_.clip == Clip::max_clip) {
      for (std::size_t i = 0; i < raw_.size(); ++i) {
        clipped_[i] = std::max(cfg_.alpha, std::fabs(raw_[i]));
      }
    } else {
      for (std::size_t i = 0; i < raw_.size(); ++i) {
        clipped_[i] = std::fabs(raw_[i]) + cfg_.alpha;
      }
    }
  }

  PrecondConfig cfg_;
  std::size_t step_index_ = 0;
  Vector raw_;
  Vector clipped_;
};

struct SandwichReport {
  double min_entry = 0.0;
  double max_entry = 0.0;
  bool ok = false;
};

/// Lemma-style spectral sandwich: every clipped entry must lie within
/// [alpha, Gamma] (max_clip) or [alpha, Gamma + alpha] (add_clip), slack 1e-12.
inline SandwichReport check_sandwich(const Vector& clipped,
                                     const PrecondConfig& cfg) {
  SandwichReport rep;
  rep.min_entry = min_entry(clipped);
  rep.max_entry = max_entry(clipped);
  const double lo = cfg.alpha - 1e-12;
  const double hi = cfg.certified_upper() + 1e-12;
  rep.ok = rep.min_entry >= lo && rep.max_entry <= hi;
  return rep;
}

inline SandwichReport check_sandwich(const DiagPrecondState& state) {
  return check_sandwich(state.clipped(), state.config());
}

/// Per-update growth bound on the clipped diagonal, elementwise with slack
/// 1e-12. Max clipping certifies the classical factors
///   square: 1 + (1-beta)*Gamma^2/(2 alpha^2)
///   linear: 1 + 2(1-beta)*Gamma/alpha.
/// Additive clipping shifts the square-rule factor: with raw near zero the
/// clipped entry sits at alpha while one admissible update can lift it to
/// sqrt(1-beta)*Gamma + alpha, so the certified factor there is
/// 1 + sqrt(1-beta)*Gamma/alpha (from sqrt(b*r^2 + (1-b)G^2) <=
/// sqrt(b)*r + sqrt(1-b)*G). The linear-rule factor covers both clip modes.
/// Identity rule: factor 1.
inline bool check_growth(const Vector& prev_clipped, const Vector& next_clipped,
                         double beta_next, const PrecondConfig& cfg) {
  if (prev_clipped.size() != next_clipped.size()) {
    throw ContractError("check_growth: dimension mismatch");
  }
  double factor = 1.0;
  if (cfg.rule == Rule::square) {
    if (cfg.clip == Clip::max_clip) {
      factor = 1.0 + (1.0 - beta_next) * cfg.gamma_cap * cfg.gamma_cap /
                         (2.0 * cfg.alpha * cfg.alpha);
    } else {
      factor = 1.0 + std::sqrt(1.0 - beta_next) * cfg.gamma_cap / cfg.alpha;
    }
  } else if (cfg.rule == Rule::linear) {
    factor = 1.0 + 2.0 * (1.0 - beta_next) * cfg.gamma_cap / cfg.alpha;
  }
  for (std::size_t i = 0; i < prev_clipped.size(); ++i) {
    if (next_clipped[i] > factor * prev_clipped[i] + 1e-12) return false;
  }
  return true;
}

/// Draws one stochastic curvature estimate at x for worker m.
///   grad_square: g .* g for one stochastic gradient draw (entries of (H^t)^2
///     under the square rule; |g| under the linear rule).
///   hutchinson: v .* (Hessian-sample * v) with Rademacher v (squared
///     elementwise under the square rule).
/// With strict_admissible, grad_square entries are clamped to the admissible
/// range before they enter the recurrence. When max_abs_grad is given it is
/// raised to the largest gradient entry drawn here (grad_square only).
inline Vector estimate_H(const problems::ProblemSuite& suite, std::size_t worker,
                         const Vector& x, RngStream& rng,
                         const PrecondConfig& cfg,
                         double* max_abs_grad = nullptr) {
  check_dim(x, suite.dim(), "estimate_H");
  const std::size_t d = suite.dim();
  if (cfg.rule == Rule::identity) return ones(d);

  Vector h(d);
  if (cfg.estimator == Estimator::grad_square) {
    Vector g = suite.stoch_grad(worker, x, rng);
    if (max_abs_grad != nullptr) {
      *max_abs_grad = std::max(*max_abs_grad, max_abs(g));
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double gi = cfg.strict_admissible
                            ? std::min(std::fabs(g[i]), cfg.gamma_cap)
                            : std::fabs(g[i]);
      h[i] = cfg.rule == Rule::square ? gi * gi : gi;
    }
    return h;
  }

  // Hutchinson probe: one sampled Hessian, one Rademacher direction.
  const std::size_t n = suite.worker_samples(worker);
  const std::size_t j = (n == 1) ? 0 : rng.uniform_index(n);
  Vector v = rng.rademacher_vec(d);
  Vector hv = suite.hvp(worker, x, v, j);
  for (std::size_t i = 0; i < d; ++i) {
    const double probe = v[i] * hv[i];
    h[i] = cfg.rule == Rule::square ? probe * probe : probe;
  }
  return h;
}

// ---------------------------------------------------------------------------
// JSON checkpoint
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PrecondConfig& cfg) {
  nlohmann::json j;
  j["rule"] = to_string(cfg.rule);
  j["clip"] = to_string(cfg.clip);
  j["alpha"] = cfg.alpha;
  j["gamma_cap"] = cfg.gamma_cap;
  j["estimator"] = to_string(cfg.estimator);
  j["strict_admissible"] = cfg.strict_admissible;
  j["d0_value"] = cfg.d0();
  switch (cfg.beta_schedule.kind) {
    case BetaSchedule::Kind::constant:
      j["beta_schedule"] = {{"kind", "constant"}, {"beta", cfg.beta_schedule.beta}};
      break;
    case BetaSchedule::Kind::adam:
      j["beta_schedule"] = {{"kind", "adam"}, {"beta", cfg.beta_schedule.beta}};
      break;
    case BetaSchedule::Kind::theory_driven:
      j["beta_schedule"] = {{"kind", "theory_driven"},
                            {"gamma", cfg.beta_schedule.gamma},
                            {"mu", cfg.beta_schedule.mu}};
      break;
  }
  return j;
}

inline PrecondConfig precond_config_from_json(const nlohmann::json& j) {
  PrecondConfig cfg;
  const auto rule = j.at("rule").get<std::string>();
  if (rule == "square") cfg.rule = Rule::square;
  else if (rule == "linear") cfg.rule = Rule::linear;
  else if (rule == "identity") cfg.rule = Rule::identity;
  else throw ConfigError("preconditioner: unknown rule '" + rule + "'");
  const auto clip = j.at("clip").get<std::string>();
  if (clip == "max_clip") cfg.clip = Clip::max_clip;
  else if (clip == "add_clip") cfg.clip = Clip::add_clip;
  else throw ConfigError("preconditioner: unknown clip '" + clip + "'");
  cfg.alpha = j.at("alpha").get<double>();
  cfg.gamma_cap = j.at("gamma_cap").get<double>();
  const auto est = j.at("estimator").get<std::string>();
  if (est == "grad_square") cfg.estimator = Estimator::grad_square;
  else if (est == "hutchinson") cfg.estimator = Estimator::hutchinson;
  else throw ConfigError("preconditioner: unknown estimator '" + est + "'");
  cfg.strict_admissible = j.value("strict_admissible", false);
  cfg.d0_value = j.value("d0_value", 0.0);
  const auto& bs = j.at("beta_schedule");
  const auto kind = bs.at("kind").get<std::string>();
  if (kind == "constant") {
    cfg.beta_schedule = BetaSchedule::constant(bs.at("beta").get<double>());
  } else if (kind == "adam") {
    cfg.beta_schedule = BetaSchedule::adam(bs.at("beta").get<double>());
  } else if (kind == "theory_driven") {
    cfg.beta_schedule = BetaSchedule::theory_driven(bs.at("gamma").get<double>(),
                                                    bs.at("mu").get<double>());
  } else {
    throw ConfigError("preconditioner: unknown beta schedule '" + kind + "'");
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json state_to_json(const DiagPrecondState& state) {
  return {{"raw", state.raw()},
          {"clipped", state.clipped()},
          {"step_index", state.step_index()},
          {"config", to_json(state.config())}};
}

inline DiagPrecondState state_from_json(const nlohmann::json& j) {
  PrecondConfig cfg = precond_config_from_json(j.at("config"));
  return DiagPrecondState(std::move(cfg), j.at("raw").get<Vector>(),
                          j.at("step_index").get<std::size_t>());
}

}  // namespace savic::precond
