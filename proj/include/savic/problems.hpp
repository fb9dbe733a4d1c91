#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "savic/common.hpp"
#include "savic/rng.hpp"

namespace savic::problems {

/// Numerically stable log(1 + exp(t)).
inline double softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Worker problems
// ---------------------------------------------------------------------------

/// Finite sum of quadratic losses f_j(x) = 1/2 x'A_j x - b_j'x, with each A_j
/// symmetric positive-semidefinite. Matrices are stored row-major.
class QuadraticWorkerProblem {
 public:
  struct Sample {
    std::vector<double> a;  // d*d row-major, symmetric
    Vector b;
  };

  QuadraticWorkerProblem(std::size_t d, std::vector<Sample> samples)
      : d_(d), samples_(std::move(samples)) {
    if (samples_.empty()) throw ConfigError("quadratic worker: no samples");
    for (const auto& s : samples_) {
      if (s.a.size() != d_ * d_ || s.b.size() != d_) {
        throw ConfigError("quadratic worker: sample dimension mismatch");
      }
    }
  }

  std::size_t dim() const { return d_; }
  std::size_t num_samples() const { return samples_.size(); }
  const Sample& sample(std::size_t j) const { return samples_[j]; }

  double sample_loss(std::size_t j, const Vector& x) const {
    const Sample& s = samples_[j];
    double quad = 0.0;
    for (std::size_t r = 0; r < d_; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < d_; ++c) row += s.a[r * d_ + c] * x[c];
      quad += x[r] * row;
    }
    return 0.5 * quad - dot(s.b, x);
  }

  Vector sample_grad(std::size_t j, const Vector& x) const {
    const Sample& s = samples_[j];
    Vector g(d_);
    for (std::size_t r = 0; r < d_; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < d_; ++c) row += s.a[r * d_ + c] * x[c];
      g[r] = row - s.b[r];
    }
    return g;
  }

  /// Exact Hessian-vector product of sample j: A_j v. The evaluation point is
  /// irrelevant for quadratics but kept for interface parity.
  Vector sample_hvp(std::size_t j, const Vector& /*x*/, const Vector& v) const {
    const Sample& s = samples_[j];
    Vector out(d_);
    for (std::size_t r = 0; r < d_; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < d_; ++c) row += s.a[r * d_ + c] * v[c];
      out[r] = row;
    }
    return out;
  }

  double loss(const Vector& x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < samples_.size(); ++j) s += sample_loss(j, x);
    return s / static_cast<double>(samples_.size());
  }

  Vector grad(const Vector& x) const {
    Vector g = zeros(d_);
    for (std::size_t j = 0; j < samples_.size(); ++j) {
      add_in_place(g, sample_grad(j, x));
    }
    scale_in_place(g, 1.0 / static_cast<double>(samples_.size()));
    return g;
  }

 private:
  std::size_t d_;
  std::vector<Sample> samples_;
};

/// Ridge-regularized logistic regression over rows (a_j, y_j), y in {-1,+1}:
/// f_j(x) = log(1 + exp(-y_j a_j'x)) + (lambda/2)||x||^2.
class LogRegWorkerProblem {
 public:
  struct Row {
    Vector a;
    double y;  // -1 or +1
  };

  LogRegWorkerProblem(std::size_t d, std::vector<Row> rows, double lambda)
      : d_(d), rows_(std::move(rows)), lambda_(lambda) {
    if (rows_.empty()) throw ConfigError("logreg worker: no rows");
    if (lambda_ < 0.0) throw ConfigError("logreg worker: lambda must be >= 0");
    for (const auto& r : rows_) {
      if (r.a.size() != d_) throw ConfigError("logreg worker: row dim mismatch");
      const double nsq = norm_sq(r.a);
      if (!(nsq > 0.0) || !std::isfinite(nsq)) {
        throw ConfigError("logreg worker: feature norms must be finite and nonzero");
      }
      if (r.y != 1.0 && r.y != -1.0) {
        throw ConfigError("logreg worker: labels must be -1 or +1");
      }
    }
  }

  std::size_t dim() const { return d_; }
  std::size_t num_samples() const { return rows_.size(); }
  const Row& row(std::size_t j) const { return rows_[j]; }
  double lambda() const { return lambda_; }

  /// Standard smoothness overestimate max_j ||a_j||^2/4 + lambda.
  double smoothness_bound() const {
    double m = 0.0;
    for (const auto& r : rows_) m = std::max(m, norm_sq(r.a));
    return m / 4.0 + lambda_;
  }

  double strong_convexity() const { return lambda_; }

  double sample_loss(std::size_t j, const Vector& x) const {
    const Row& r = rows_[j];
    return softplus(-r.y * dot(r.a, x)) + 0.5 * lambda_ * norm_sq(x);
  }

  Vector sample_grad(std::size_t j, const Vector& x) const {
    const Row& r = rows_[j];
    const double margin = r.y * dot(r.a, x);
    const double coef = -r.y * sigmoid(-margin);
    Vector g(d_);
    for (std::size_t i = 0; i < d_; ++i) g[i] = coef * r.a[i] + lambda_ * x[i];
    return g;
  }

  /// Hessian of row j is p(1-p) a a' + lambda I with p = sigmoid(y a'x).
  Vector sample_hvp(std::size_t j, const Vector& x, const Vector& v) const {
    const Row& r = rows_[j];
    const double p = sigmoid(r.y * dot(r.a, x));
    const double coef = p * (1.0 - p) * dot(r.a, v);
    Vector out(d_);
    for (std::size_t i = 0; i < d_; ++i) out[i] = coef * r.a[i] + lambda_ * v[i];
    return out;
  }

  double loss(const Vector& x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < rows_.size(); ++j) s += sample_loss(j, x);
    return s / static_cast<double>(rows_.size());
  }

  Vector grad(const Vector& x) const {
    Vector g = zeros(d_);
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      add_in_place(g, sample_grad(j, x));
    }
    scale_in_place(g, 1.0 / static_cast<double>(rows_.size()));
    return g;
  }

 private:
  std::size_t d_;
  std::vector<Row> rows_;
  double lambda_;
};

using WorkerProblem = std::variant<QuadraticWorkerProblem, LogRegWorkerProblem>;

enum class Regime { identical, heterogeneous };

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

/// A finite-sum objective split across M workers:
/// f(x) = (1/M) sum_m f_m(x), f_m the uniform average over worker m's samples.
/// Immutable after construction; all randomness enters via caller streams.
class ProblemSuite {
 public:
  ProblemSuite(std::vector<WorkerProblem> workers, Regime regime,
               double noise_sigma, double mu, double smooth_L)
      : workers_(std::move(workers)),
        regime_(regime),
        noise_sigma_(noise_sigma),
        mu_(mu),
        smooth_L_(smooth_L) {
    if (workers_.empty()) throw ConfigError("suite: needs at least one worker");
    d_ = std::visit([](const auto& w) { return w.dim(); }, workers_.front());
    for (const auto& w : workers_) {
      if (std::visit([](const auto& p) { return p.dim(); }, w) != d_) {
        throw ConfigError("suite: inconsistent worker dimensions");
      }
    }
    if (noise_sigma_ < 0.0) throw ConfigError("suite: noise sigma must be >= 0");
    if (noise_sigma_ > 0.0 && regime_ != Regime::identical) {
      throw ConfigError("suite: gaussian noise is defined for the identical regime only");
    }
  }

  std::size_t dim() const { return d_; }
  std::size_t num_workers() const { return workers_.size(); }
  Regime regime() const { return regime_; }
  double noise_sigma() const { return noise_sigma_; }
  double mu() const { return mu_; }
  double smoothness() const { return smooth_L_; }
  const WorkerProblem& worker(std::size_t m) const { return workers_[m]; }

  std::size_t worker_samples(std::size_t m) const {
    return std::visit([](const auto& w) { return w.num_samples(); }, workers_[m]);
  }

  double worker_loss(std::size_t m, const Vector& x) const {
    check_dim(x, d_, "worker_loss");
    return std::visit([&](const auto& w) { return w.loss(x); }, workers_[m]);
  }

  /// f(x) = (1/M) sum_m f_m(x), summed in ascending worker order.
  double global_loss(const Vector& x) const {
    double s = 0.0;
    for (std::size_t m = 0; m < workers_.size(); ++m) s += worker_loss(m, x);
    return s / static_cast<double>(workers_.size());
  }

  /// Exact average gradient of worker m.
  Vector grad(std::size_t m, const Vector& x) const {
    check_dim(x, d_, "grad");
    return std::visit([&](const auto& w) { return w.grad(x); }, workers_[m]);
  }

  Vector global_grad(const Vector& x) const {
    Vector g = zeros(d_);
    for (std::size_t m = 0; m < workers_.size(); ++m) add_in_place(g, grad(m, x));
    scale_in_place(g, 1.0 / static_cast<double>(workers_.size()));
    return g;
  }

  double sample_loss(std::size_t m, std::size_t j, const Vector& x) const {
    return std::visit([&](const auto& w) { return w.sample_loss(j, x); },
                      workers_[m]);
  }

  Vector sample_grad(std::size_t m, std::size_t j, const Vector& x) const {
    return std::visit([&](const auto& w) { return w.sample_grad(j, x); },
                      workers_[m]);
  }

  /// Gradient of one uniformly drawn sample; in the identical regime with
  /// sigma > 0, plus isotropic gaussian noise of total variance sigma^2.
  Vector stoch_grad(std::size_t m, const Vector& x, RngStream& rng) const {
    check_dim(x, d_, "stoch_grad");
    const std::size_t n = worker_samples(m);
    const std::size_t j = (n == 1) ? 0 : rng.uniform_index(n);
    Vector g = sample_grad(m, j, x);
    if (noise_sigma_ > 0.0) {
      const double per_coord = noise_sigma_ / std::sqrt(static_cast<double>(d_));
      for (double& gi : g) gi += per_coord * rng.normal();
    }
    return g;
  }

  /// Exact Hessian-vector product of worker m's sample j at x.
  Vector hvp(std::size_t m, const Vector& x, const Vector& v,
             std::size_t j) const {
    check_dim(x, d_, "hvp");
    check_dim(v, d_, "hvp direction");
    if (j >= worker_samples(m)) throw ConfigError("hvp: sample index out of range");
    return std::visit([&](const auto& w) { return w.sample_hvp(j, x, v); },
                      workers_[m]);
  }

 private:
  std::vector<WorkerProblem> workers_;
  Regime regime_;
  double noise_sigma_;
  double mu_;
  double smooth_L_;
  std::size_t d_ = 0;
};

// ---------------------------------------------------------------------------
// Exact optimum and dispersion at the optimum
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd mean_quadratic_matrix(const ProblemSuite& suite) {
  const auto d = static_cast<Eigen::Index>(suite.dim());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
  double count = 0.0;
  for (std::size_t m = 0; m < suite.num_workers(); ++m) {
    const auto& q = std::get<QuadraticWorkerProblem>(suite.worker(m));
    Eigen::MatrixXd wacc = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t j = 0; j < q.num_samples(); ++j) {
      wacc += Eigen::Map<const Eigen::MatrixXd>(q.sample(j).a.data(), d, d);
    }
    acc += wacc / static_cast<double>(q.num_samples());
    count += 1.0;
  }
  return acc / count;
}

}  // namespace detail

/// Solves for the unique global minimizer and its objective value.
/// Quadratic suites: closed-form solve of (mean A) x = mean b.
/// Logreg suites (lambda > 0): damped Newton to gradient norm < 1e-12.
inline std::pair<Vector, double> exact_optimum(const ProblemSuite& suite) {
  const auto d = static_cast<Eigen::Index>(suite.dim());
  if (std::holds_alternative<QuadraticWorkerProblem>(suite.worker(0))) {
    Eigen::MatrixXd mean_a = detail::mean_quadratic_matrix(suite);
    Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(d);
    for (std::size_t m = 0; m < suite.num_workers(); ++m) {
      const auto& q = std::get<QuadraticWorkerProblem>(suite.worker(m));
      Eigen::VectorXd wacc = Eigen::VectorXd::Zero(d);
      for (std::size_t j = 0; j < q.num_samples(); ++j) {
        wacc += Eigen::Map<const Eigen::VectorXd>(q.sample(j).b.data(), d);
      }
      mean_b += wacc / static_cast<double>(q.num_samples());
    }
    mean_b /= static_cast<double>(suite.num_workers());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(mean_a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 0.0) {
      throw ConfigError("exact_optimum: no unique optimum (mean matrix not positive definite)");
    }
    Eigen::VectorXd xs = ldlt.solve(mean_b);
    Vector x_star(xs.data(), xs.data() + d);
    return {x_star, suite.global_loss(x_star)};
  }

  // Logistic regression: requires lambda > 0 for a unique optimum.
  const auto& first = std::get<LogRegWorkerProblem>(suite.worker(0));
  if (first.lambda() <= 0.0) {
    throw ConfigError("exact_optimum: no unique optimum (logreg needs lambda > 0)");
  }
  Vector x = zeros(suite.dim());
  for (int iter = 0; iter < 200; ++iter) {
    Vector g = suite.global_grad(x);
    if (norm(g) < 1e-12) break;
    // Assemble the global Hessian (desk-scale d).
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t m = 0; m < suite.num_workers(); ++m) {
      const auto& w = std::get<LogRegWorkerProblem>(suite.worker(m));
      Eigen::MatrixXd wacc = Eigen::MatrixXd::Zero(d, d);
      for (std::size_t j = 0; j < w.num_samples(); ++j) {
        const auto& r = w.row(j);
        const double p = sigmoid(r.y * dot(r.a, x));
        const auto a = Eigen::Map<const Eigen::VectorXd>(r.a.data(), d);
        wacc += (p * (1.0 - p)) * (a * a.transpose());
      }
      hess += wacc / static_cast<double>(w.num_samples());
    }
    hess /= static_cast<double>(suite.num_workers());
    hess += first.lambda() * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd step =
        hess.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(g.data(), d));
    // Backtracking damping on the global loss.
    const double f0 = suite.global_loss(x);
    double s = 1.0;
    Vector cand(x);
    for (int bt = 0; bt < 60; ++bt) {
      for (Eigen::Index i = 0; i < d; ++i) {
        cand[static_cast<std::size_t>(i)] =
            x[static_cast<std::size_t>(i)] - s * step(i);
      }
      if (suite.global_loss(cand) <= f0) break;
      s *= 0.5;
    }
    x = cand;
  }
  if (norm(suite.global_grad(x)) >= 1e-10) {
    throw ConfigError("exact_optimum: newton failed to reach tolerance");
  }
  return {x, suite.global_loss(x)};
}

/// sigma_dif^2 = (1/M) sum_m E ||grad f_m(x*, z_m)||^2, evaluated as the exact
/// finite-sum expectation; injected gaussian noise (identical regime)
/// contributes its variance sigma^2.
inline double sigma_dif_sq(const ProblemSuite& suite, const Vector& x_star) {
  check_dim(x_star, suite.dim(), "sigma_dif_sq");
  double acc = 0.0;
  for (std::size_t m = 0; m < suite.num_workers(); ++m) {
    const std::size_t n = suite.worker_samples(m);
    double wacc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      wacc += norm_sq(suite.sample_grad(m, j, x_star));
    }
    acc += wacc / static_cast<double>(n);
  }
  acc /= static_cast<double>(suite.num_workers());
  return acc + suite.noise_sigma() * suite.noise_sigma();
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

struct QuadraticSuiteSpec {
  std::size_t M = 1;
  std::size_t d = 2;
  std::size_t samples_per_worker = 1;
  double mu = 1.0;
  double L = 10.0;
  Regime regime = Regime::identical;
  double noise_sigma = 0.0;  // identical regime only
  std::uint64_t seed = 0;
  bool orthogonal_basis = true;  // false: diagonal matrices
  // Heterogeneous controls: each sample's minimizer is
  // base + worker_shift * u_m + sample_spread * v_{m,j}.
  double worker_shift = 1.0;
  double sample_spread = 0.0;
  double base_scale = 1.0;
};

namespace detail {

/// Random orthogonal matrix via QR of a gaussian matrix, sign-fixed.
inline Eigen::MatrixXd random_orthogonal(std::size_t d, RngStream& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return q;
}

inline Vector mat_vec(const std::vector<double>& a, std::size_t d,
                      const Vector& v) {
  Vector out(d);
  for (std::size_t r = 0; r < d; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < d; ++c) row += a[r * d + c] * v[c];
    out[r] = row;
  }
  return out;
}

/// One random PSD matrix with spectrum log-uniform in [mu, L]. For d >= 2 the
/// extreme eigenvalues are pinned to mu and L so the declared range is tight.
inline std::vector<double> random_psd_matrix(std::size_t d, double mu, double L,
                                             bool orthogonal, RngStream& rng) {
  Vector eigs(d);
  for (std::size_t i = 0; i < d; ++i) {
    eigs[i] = std::exp(rng.uniform(std::log(mu), std::log(L)));
  }
  if (d >= 2) {
    eigs[0] = mu;
    eigs[1] = L;
  }
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd a;
  if (orthogonal) {
    Eigen::MatrixXd q = random_orthogonal(d, rng);
    a = q * Eigen::Map<Eigen::VectorXd>(eigs.data(), n).asDiagonal() *
        q.transpose();
    a = 0.5 * (a + a.transpose());  // kill asymmetric rounding residue
  } else {
    a = Eigen::Map<Eigen::VectorXd>(eigs.data(), n).asDiagonal();
  }
  return {a.data(), a.data() + d * d};
}

}  // namespace detail

/// Synthetic quadratic suite with controllable condition number and
/// heterogeneity. Identical regime: one sample set shared byte-identically by
/// all workers. Heterogeneous: per-worker matrices and minimizer offsets;
/// worker_shift = 0 and sample_spread = 0 gives workers that differ in
/// curvature but share the exact optimum (interpolation regime).
inline ProblemSuite make_quadratic_suite(const QuadraticSuiteSpec& spec) {
  if (spec.M < 1 || spec.d < 1 || spec.samples_per_worker < 1) {
    throw ConfigError("quadratic suite: M, d, samples_per_worker must be >= 1");
  }
  if (!(spec.mu > 0.0) || !(spec.L >= spec.mu)) {
    throw ConfigError("quadratic suite: need 0 < mu <= L");
  }
  RngStream rng = RngStream::derive(spec.seed, StreamDomain::suite, 0);
  std::vector<WorkerProblem> workers;
  workers.reserve(spec.M);

  Vector base(spec.d);
  for (double& v : base) v = spec.base_scale * rng.normal();

  if (spec.regime == Regime::identical) {
    std::vector<QuadraticWorkerProblem::Sample> samples;
    for (std::size_t j = 0; j < spec.samples_per_worker; ++j) {
      QuadraticWorkerProblem::Sample s;
      s.a = detail::random_psd_matrix(spec.d, spec.mu, spec.L,
                                      spec.orthogonal_basis, rng);
      Vector theta(base);
      if (spec.sample_spread > 0.0) {
        for (double& v : theta) v += spec.sample_spread * rng.normal();
      }
      // b = A theta, so the sample's minimizer is theta.
      s.b = detail::mat_vec(s.a, spec.d, theta);
      samples.push_back(std::move(s));
    }
    for (std::size_t m = 0; m < spec.M; ++m) {
      workers.emplace_back(QuadraticWorkerProblem(spec.d, samples));
    }
  } else {
    for (std::size_t m = 0; m < spec.M; ++m) {
      Vector shift = zeros(spec.d);
      if (spec.worker_shift > 0.0) {
        for (double& v : shift) v = spec.worker_shift * rng.normal();
      }
      std::vector<QuadraticWorkerProblem::Sample> samples;
      for (std::size_t j = 0; j < spec.samples_per_worker; ++j) {
        QuadraticWorkerProblem::Sample s;
        s.a = detail::random_psd_matrix(spec.d, spec.mu, spec.L,
                                        spec.orthogonal_basis, rng);
        Vector theta(base);
        add_in_place(theta, shift);
        if (spec.sample_spread > 0.0) {
          for (double& v : theta) v += spec.sample_spread * rng.normal();
        }
        s.b = detail::mat_vec(s.a, spec.d, theta);
        samples.push_back(std::move(s));
      }
      workers.emplace_back(QuadraticWorkerProblem(spec.d, std::move(samples)));
    }
  }
  return ProblemSuite(std::move(workers), spec.regime, spec.noise_sigma,
                      spec.mu, spec.L);
}

struct HeteroLogRegSpec {
  std::size_t M = 2;
  std::size_t d = 4;
  std::size_t rows_per_worker = 32;
  double skew = 0.5;  // fraction of rows from the worker's main class
  double lambda = 0.1;
  std::uint64_t seed = 0;
  double center_scale = 2.0;
  double within_noise = 0.5;
};

/// Class id of each of worker m's n rows: floor(skew*n) rows of the worker's
/// main class m, remainder dealt round-robin across the other classes
/// starting at (m+1) mod M.
inline std::vector<std::size_t> hetero_class_sequence(std::size_t M,
                                                      std::size_t n,
                                                      double skew,
                                                      std::size_t m) {
  const auto main_count = static_cast<std::size_t>(
      std::floor(skew * static_cast<double>(n) + 1e-12));
  std::vector<std::size_t> seq;
  seq.reserve(n);
  for (std::size_t j = 0; j < std::min(main_count, n); ++j) seq.push_back(m);
  std::size_t next = (m + 1) % M;
  while (seq.size() < n) {
    if (M == 1) {
      seq.push_back(0);
      continue;
    }
    seq.push_back(next);
    next = (next + 1) % M;
    if (next == m) next = (next + 1) % M;
  }
  return seq;
}

/// Skewed non-iid logistic suite: there are M classes; worker m draws
/// floor(skew * n) rows from class m's generating distribution and deals the
/// remainder round-robin across the other classes. Deterministic in seed.
inline ProblemSuite generate_heterogeneous(const HeteroLogRegSpec& spec) {
  const std::size_t num_classes = spec.M;
  if (spec.M < 1 || spec.d < 1 || spec.rows_per_worker < 1) {
    throw ConfigError("hetero logreg: M, d, rows_per_worker must be >= 1");
  }
  if (spec.skew < 1.0 / static_cast<double>(num_classes) - 1e-12 ||
      spec.skew > 1.0 + 1e-12) {
    throw ConfigError("hetero logreg: skew must lie in [1/num_classes, 1]");
  }
  RngStream rng = RngStream::derive(spec.seed, StreamDomain::suite, 1);

  // Per-class generating distribution: gaussian blob around a random center,
  // labels from a logistic model with a random class separator.
  std::vector<Vector> centers(num_classes), separators(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    centers[c] = rng.normal_vec(spec.d);
    scale_in_place(centers[c], spec.center_scale / std::max(1e-12, norm(centers[c])));
    separators[c] = rng.normal_vec(spec.d);
  }
  auto draw_row = [&](std::size_t c) {
    LogRegWorkerProblem::Row r;
    r.a = centers[c];
    for (double& v : r.a) v += spec.within_noise * rng.normal();
    const double p = sigmoid(dot(separators[c], r.a));
    r.y = (rng.uniform01() < p) ? 1.0 : -1.0;
    return r;
  };

  std::vector<WorkerProblem> workers;
  workers.reserve(spec.M);
  double max_row_norm_sq = 0.0;
  for (std::size_t m = 0; m < spec.M; ++m) {
    const std::size_t n = spec.rows_per_worker;
    const auto classes = hetero_class_sequence(num_classes, n, spec.skew, m);
    std::vector<LogRegWorkerProblem::Row> rows;
    rows.reserve(n);
    for (std::size_t c : classes) rows.push_back(draw_row(c));
    LogRegWorkerProblem w(spec.d, std::move(rows), spec.lambda);
    max_row_norm_sq = std::max(max_row_norm_sq, (w.smoothness_bound() - spec.lambda) * 4.0);
    workers.emplace_back(std::move(w));
  }
  const double L = max_row_norm_sq / 4.0 + spec.lambda;
  return ProblemSuite(std::move(workers), Regime::heterogeneous, 0.0,
                      spec.lambda, L);
}

// ---------------------------------------------------------------------------
// JSON serialization (reproducible experiment archives)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ProblemSuite& suite) {
  nlohmann::json j;
  j["d"] = suite.dim();
  j["regime"] = suite.regime() == Regime::identical ? "identical" : "heterogeneous";
  j["noise_sigma"] = suite.noise_sigma();
  j["mu"] = suite.mu();
  j["L"] = suite.smoothness();
  nlohmann::json workers = nlohmann::json::array();
  for (std::size_t m = 0; m < suite.num_workers(); ++m) {
    nlohmann::json w;
    if (const auto* q = std::get_if<QuadraticWorkerProblem>(&suite.worker(m))) {
      w["type"] = "quadratic";
      nlohmann::json samples = nlohmann::json::array();
      for (std::size_t s = 0; s < q->num_samples(); ++s) {
        samples.push_back({{"a", q->sample(s).a}, {"b", q->sample(s).b}});
      }
      w["samples"] = std::move(samples);
    } else {
      const auto& lr = std::get<LogRegWorkerProblem>(suite.worker(m));
      w["type"] = "logreg";
      w["lambda"] = lr.lambda();
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t s = 0; s < lr.num_samples(); ++s) {
        rows.push_back({{"a", lr.row(s).a}, {"y", lr.row(s).y}});
      }
      w["rows"] = std::move(rows);
    }
    workers.push_back(std::move(w));
  }
  j["workers"] = std::move(workers);
  return j;
}

inline ProblemSuite suite_from_json(const nlohmann::json& j) {
  const auto d = j.at("d").get<std::size_t>();
  const Regime regime = j.at("regime").get<std::string>() == "identical"
                            ? Regime::identical
                            : Regime::heterogeneous;
  std::vector<WorkerProblem> workers;
  for (const auto& w : j.at("workers")) {
    if (w.at("type").get<std::string>() == "quadratic") {
      std::vector<QuadraticWorkerProblem::Sample> samples;
      for (const auto& s : w.at("samples")) {
        samples.push_back({s.at("a").get<std::vector<double>>(),
                           s.at("b").get<Vector>()});
      }
      workers.emplace_back(QuadraticWorkerProblem(d, std::move(samples)));
    } else {
      std::vector<LogRegWorkerProblem::Row> rows;
      for (const auto& r : w.at("rows")) {
        rows.push_back({r.at("a").get<Vector>(), r.at("y").get<double>()});
      }
      workers.emplace_back(
          LogRegWorkerProblem(d, std::move(rows), w.at("lambda").get<double>()));
    }
  }
  return ProblemSuite(std::move(workers), regime,
                      j.at("noise_sigma").get<double>(),
                      j.at("mu").get<double>(), j.at("L").get<double>());
}

}  // namespace savic::problems
