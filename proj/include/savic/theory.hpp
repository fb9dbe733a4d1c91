#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "savic/common.hpp"

namespace savic::theory {

/// Problem and preconditioner constants the rate statements are written in.
struct RateParams {
  double mu = 1.0;
  double L = 1.0;
  double alpha = 1.0;
  double gamma_cap = 1.0;
  double sigma_sq = 0.0;
  double sigma_dif_sq = 0.0;
  std::size_t M = 1;
  std::size_t H = 1;
  std::size_t d = 1;

  double kappa() const { return L / mu; }
  /// Scaled condition number L*Gamma/(mu*alpha).
  double kappa_hat() const { return L * gamma_cap / (mu * alpha); }

  void validate(bool need_mu = true) const {
    if (need_mu && !(mu > 0.0)) throw ConfigError("rate params: mu must be > 0");
    if (!(L > 0.0) || !(alpha > 0.0) || !(gamma_cap >= alpha)) {
      throw ConfigError("rate params: need L > 0 and 0 < alpha <= gamma_cap");
    }
    if (sigma_sq < 0.0 || sigma_dif_sq < 0.0) {
      throw ConfigError("rate params: variances must be >= 0");
    }
    if (M < 1 || H < 1) throw ConfigError("rate params: M and H must be >= 1");
  }
};

struct StepSizePrescription {
  double gamma = 0.0;
  std::size_t T = 0;
};

/// Identical-data tuning: gamma = Gamma/(mu*a) with a = 4*kappa_hat + t_slack
/// and horizon T = ceil(4*a*ln(a)). Always satisfies gamma <= alpha/(4L); a
/// violation means the slack was chosen non-positive.
inline StepSizePrescription step_size_identical(const RateParams& p,
                                                double t_slack = 1.0) {
  p.validate(true);
  if (!(t_slack > 0.0)) throw ConfigError("step_size_identical: slack too small");
  const double a = 4.0 * p.kappa_hat() + t_slack;
  const double gamma = p.gamma_cap / (p.mu * a);
  if (gamma > p.alpha / (4.0 * p.L) * (1.0 + 1e-12)) {
    throw ConfigError("step_size_identical: slack too small");
  }
  const double t_raw = 4.0 * a * std::log(a);
  return {gamma, static_cast<std::size_t>(std::ceil(t_raw))};
}

/// Noise constant of the heterogeneous rate:
/// c = sigma_dif^2 * (9(H-1)/(2 alpha) + 8/(M alpha)).
inline double hetero_noise_constant(const RateParams& p) {
  return p.sigma_dif_sq * (9.0 * static_cast<double>(p.H - 1) / (2.0 * p.alpha) +
                           8.0 / (static_cast<double>(p.M) * p.alpha));
}

/// Heterogeneous-data tuning for a fixed horizon T:
///   gamma = min( alpha/(10(H-1)L),
///                (2 Gamma/(mu T)) ln(max(2, mu^2 r0^2 T^2/(4 Gamma c))) ).
/// With c = 0 the log branch diverges and the cap binds; with H = 1 the cap
/// is undefined and the log branch alone is returned.
inline double step_size_hetero(const RateParams& p, std::size_t T,
                               double r0_sq) {
  p.validate(true);
  if (T < 1) throw ConfigError("step_size_hetero: T must be >= 1");
  if (!(r0_sq >= 0.0)) throw ConfigError("step_size_hetero: r0_sq must be >= 0");
  const double c = hetero_noise_constant(p);
  const bool has_cap = p.H >= 2;
  const double cap =
      has_cap ? p.alpha / (10.0 * static_cast<double>(p.H - 1) * p.L) : 0.0;
  if (c <= 0.0) {
    if (!has_cap) {
      throw ConfigError("step_size_hetero: H = 1 with zero noise constant has no finite prescription");
    }
    return cap;
  }
  const double arg = std::max(
      2.0, p.mu * p.mu * r0_sq * static_cast<double>(T) * static_cast<double>(T) /
               (4.0 * p.gamma_cap * c));
  const double log_branch =
      2.0 * p.gamma_cap / (p.mu * static_cast<double>(T)) * std::log(arg);
  return has_cap ? std::min(cap, log_branch) : log_branch;
}

/// Identical-data error bound per iteration with unit O-constant:
///   (1 - gamma mu/(2 Gamma))^t (Gamma/alpha) r0^2
///   + gamma Gamma sigma^2/(alpha^2 mu M)
///   + L gamma^2 Gamma (H-1) sigma^2/(mu alpha^3).
/// Shape only; used for overlays and scaling checks, not hard inequalities.
inline std::vector<double> bound_curve_identical(const RateParams& p,
                                                 double gamma, std::size_t T,
                                                 double r0_sq) {
  p.validate(true);
  if (gamma > p.alpha / (4.0 * p.L) * (1.0 + 1e-12)) {
    throw ConfigError("bound_curve_identical: gamma exceeds alpha/(4L)");
  }
  const double rate = 1.0 - gamma * p.mu / (2.0 * p.gamma_cap);
  const double floor1 = gamma * p.gamma_cap * p.sigma_sq /
                        (p.alpha * p.alpha * p.mu * static_cast<double>(p.M));
  const double floor2 = p.L * gamma * gamma * p.gamma_cap *
                        static_cast<double>(p.H - 1) * p.sigma_sq /
                        (p.mu * p.alpha * p.alpha * p.alpha);
  std::vector<double> out;
  out.reserve(T + 1);
  double geo = p.gamma_cap / p.alpha * r0_sq;
  for (std::size_t t = 0; t <= T; ++t) {
    out.push_back(geo + floor1 + floor2);
    geo *= rate;
  }
  return out;
}

/// Heterogeneous-data f-gap bound for the weighted average after T steps:
///   (1 - gamma mu/(2 Gamma))^T Gamma r0^2/gamma + gamma c.
inline double bound_curve_hetero(const RateParams& p, double gamma,
                                 std::size_t T, double r0_sq) {
  p.validate(false);
  if (p.H >= 2 &&
      gamma > p.alpha / (10.0 * static_cast<double>(p.H - 1) * p.L) * (1.0 + 1e-12)) {
    throw ConfigError("bound_curve_hetero: gamma exceeds alpha/(10(H-1)L)");
  }
  const double rate = 1.0 - gamma * p.mu / (2.0 * p.gamma_cap);
  return std::pow(rate, static_cast<double>(T)) * p.gamma_cap * r0_sq / gamma +
         gamma * hetero_noise_constant(p);
}

struct FedAdaGradTheoryParams {
  double L = 1.0;
  double G = 1.0;
  double tau = 0.1;
  std::size_t K = 1;
  std::size_t T = 1;
  double eta = 1.0;
};

/// Largest admissible local step for the FedAdaGrad rate: the minimum of the
/// five branches of the published condition, all scaled by 1/(16K). Monotone
/// nondecreasing in tau, which drives the tau-study.
inline double fedadagrad_eta_l(const FedAdaGradTheoryParams& p) {
  if (!(p.L > 0.0) || !(p.G > 0.0) || !(p.tau > 0.0) || !(p.eta > 0.0) ||
      p.K < 1 || p.T < 1) {
    throw ConfigError("fedadagrad_eta_l: all inputs must be positive");
  }
  const double t = static_cast<double>(p.T);
  const double b1 = 1.0 / p.L;
  const double b2 =
      std::pow(t, -1.0 / 6.0) * std::cbrt(p.tau / (120.0 * p.L * p.L * p.G));
  const double b3 = p.tau * p.eta * p.L / (2.0 * p.G * p.G);
  const double b4 = p.tau / (4.0 * p.L * p.eta);
  const double b5 =
      std::pow(t, -1.0 / 4.0) * std::sqrt(p.tau * p.tau / (p.G * p.L * p.eta));
  const double m = std::min({b1, b2, b3, b4, b5});
  return m / (16.0 * static_cast<double>(p.K));
}

}  // namespace savic::theory
