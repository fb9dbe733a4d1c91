#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "savic/common.hpp"
#include "savic/precond.hpp"
#include "savic/problems.hpp"
#include "savic/rng.hpp"

namespace savic::engine {

// ---------------------------------------------------------------------------
// Schedules and configs
// ---------------------------------------------------------------------------

/// Synchronization timesteps t_0 = 0, t_1, t_2, ... A timestep t_p marks a
/// consensus point: the averaging step is the one that arrives at t_p, and
/// the shared preconditioner is refreshed at t_p on the averaged iterate.
class SyncSchedule {
 public:
  static SyncSchedule fixed_gap(std::size_t H) {
    if (H < 1) throw ConfigError("schedule: H must be >= 1");
    SyncSchedule s;
    s.gap_ = H;
    return s;
  }

  static SyncSchedule explicit_times(std::vector<std::size_t> times) {
    if (times.empty() || times.front() != 0) {
      throw ConfigError("schedule: explicit times must start at t0 = 0");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (times[i] <= times[i - 1]) {
        throw ConfigError("schedule: explicit times must be strictly increasing");
      }
    }
    SyncSchedule s;
    s.times_ = std::move(times);
    return s;
  }

  bool is_sync(std::size_t t) const {
    if (gap_ > 0) return t % gap_ == 0;
    return std::binary_search(times_.begin(), times_.end(), t);
  }

  /// Largest gap between consecutive sync times over a horizon of T steps
  /// (the H of the rate statements).
  std::size_t max_gap(std::size_t T) const {
    if (gap_ > 0) return gap_;
    std::size_t h = 0;
    std::size_t prev = 0;
    for (std::size_t t : times_) {
      if (t > T) break;
      h = std::max(h, t - prev);
      prev = t;
    }
    h = std::max(h, T - prev);
    return std::max<std::size_t>(h, 1);
  }

  bool is_fixed_gap() const { return gap_ > 0; }
  std::size_t fixed_gap_value() const { return gap_; }
  const std::vector<std::size_t>& times() const { return times_; }

 private:
  std::size_t gap_ = 0;                // > 0: t_p = p*gap
  std::vector<std::size_t> times_;     // explicit, ascending, starts at 0
};

enum class ScalingMode { global, local_experimental };

struct SavicConfig {
  double gamma = 0.1;
  SyncSchedule schedule = SyncSchedule::fixed_gap(1);
  precond::PrecondConfig precond;
  ScalingMode scaling_mode = ScalingMode::global;
  /// Heavy-ball momentum on the scaled gradient. Experiments-only; keep 0 in
  /// theory-mode runs.
  double momentum = 0.0;
  std::size_t T = 100;
  std::uint64_t master_seed = 0;
  std::size_t batch_size = 1;
  /// Use exact worker gradients instead of sampled ones (deterministic runs).
  bool full_batch = false;
  Vector x0;

  void validate(std::size_t d, bool allow_zero_gamma = false) const {
    if (!(gamma > 0.0) && !(allow_zero_gamma && gamma == 0.0)) {
      throw ConfigError("savic: gamma must be > 0");
    }
    if (T < 1) throw ConfigError("savic: T must be >= 1");
    if (batch_size < 1) throw ConfigError("savic: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("savic: momentum must lie in [0, 1)");
    }
    check_dim(x0, d, "savic x0");
    precond.validate();
  }
};

struct FedAdaGradConfig {
  double eta = 1.0;
  double eta_l = 0.1;
  double tau = 0.1;
  double beta1 = 0.0;
  std::size_t K = 1;
  double v_init = 0.0;  // v_{-1}; must be >= tau^2
  std::size_t T = 100;
  double participation = 1.0;
  std::uint64_t master_seed = 0;
  std::size_t batch_size = 1;
  bool full_batch = false;
  Vector x0;

  void validate(std::size_t d) const {
    if (!(eta > 0.0) || !(eta_l >= 0.0)) {
      throw ConfigError("fedadagrad: eta must be > 0 and eta_l >= 0");
    }
    if (!(tau > 0.0)) throw ConfigError("fedadagrad: tau must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0) {
      throw ConfigError("fedadagrad: beta1 must lie in [0, 1)");
    }
    if (K < 1 || T < 1) throw ConfigError("fedadagrad: K and T must be >= 1");
    // Tolerate rounding on the boundary: v_init = tau^2 is legal.
    if (v_init < tau * tau * (1.0 - 1e-12)) {
      throw ConfigError("fedadagrad: v_init must be >= tau^2");
    }
    if (!(participation > 0.0) || participation > 1.0) {
      throw ConfigError("fedadagrad: participation must lie in (0, 1]");
    }
    if (batch_size < 1) throw ConfigError("fedadagrad: batch_size must be >= 1");
    check_dim(x0, d, "fedadagrad x0");
  }
};

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

enum class Phase { local, sync };

struct Row {
  std::size_t t = 0;
  Phase phase = Phase::local;
  double dist_sq = 0.0;  // ||x_hat - x*||^2
  double f_gap = 0.0;    // f(x_hat) - f*
  double V = 0.0;        // dispersion in the D-hat norm
  double d_min = 0.0;
  double d_max = 0.0;
  bool growth_ok = true;
  // In-memory extras (not serialized to CSV):
  Vector x_hat;
  double consensus_dev = 0.0;  // max_m ||x_m - x_hat||_inf
};

struct RunRecord {
  std::vector<Row> rows;
  Vector x_bar;            // weighted running average of x_hat_0..x_hat_{T-1}
  double x_bar_f_gap = 0.0;
  bool diverged = false;
  std::size_t divergence_t = 0;
  double observed_max_grad_entry = 0.0;
  Vector x_star;
  double f_star = 0.0;
  std::size_t reported_H = 1;

  static constexpr std::size_t kNotReached = std::numeric_limits<std::size_t>::max();

  /// First sync row whose f-gap is <= eps; kNotReached if none.
  std::size_t iterations_to_epsilon(double eps) const {
    for (const Row& r : rows) {
      if (r.phase == Phase::sync && r.f_gap <= eps) return r.t;
    }
    return kNotReached;
  }

  double final_dist_sq() const { return rows.empty() ? 0.0 : rows.back().dist_sq; }
  double final_f_gap() const { return rows.empty() ? 0.0 : rows.back().f_gap; }

  void write_csv(std::ostream& os,
                 const std::vector<double>* bound_column = nullptr) const;
  nlohmann::json final_metrics(double epsilon) const;
};

namespace detail {

inline void format_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

inline void RunRecord::write_csv(std::ostream& os,
                                 const std::vector<double>* bound_column) const {
  std::string line = "t,phase,dist_sq,f_gap,V_t,d_min,d_max,growth_ok";
  if (bound_column != nullptr) line += ",bound";
  line += '\n';
  os << line;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    line.clear();
    line += std::to_string(r.t);
    line += ',';
    line += (r.phase == Phase::sync ? "sync" : "local");
    line += ',';
    detail::format_double(line, r.dist_sq);
    line += ',';
    detail::format_double(line, r.f_gap);
    line += ',';
    detail::format_double(line, r.V);
    line += ',';
    detail::format_double(line, r.d_min);
    line += ',';
    detail::format_double(line, r.d_max);
    line += ',';
    line += (r.growth_ok ? '1' : '0');
    if (bound_column != nullptr) {
      line += ',';
      detail::format_double(line, i < bound_column->size() ? (*bound_column)[i]
                                                           : 0.0);
    }
    line += '\n';
    os << line;
  }
}

inline nlohmann::json RunRecord::final_metrics(double epsilon) const {
  const std::size_t it_eps = iterations_to_epsilon(epsilon);
  nlohmann::json j;
  j["final_dist_sq"] = final_dist_sq();
  j["final_f_gap"] = final_f_gap();
  j["x_bar_f_gap"] = x_bar_f_gap;
  j["diverged"] = diverged;
  if (diverged) j["divergence_t"] = divergence_t;
  j["epsilon"] = epsilon;
  if (it_eps == kNotReached) {
    j["iterations_to_epsilon"] = -1;
  } else {
    j["iterations_to_epsilon"] = it_eps;
  }
  j["rows"] = rows.size();
  j["reported_H"] = reported_H;
  return j;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// Dispersion of worker iterates around their mean in the norm induced by the
/// clipped diagonal: (1/M) sum_m sum_i d_i (x^m_i - x_hat_i)^2.
inline double compute_V(const std::vector<Vector>& worker_xs,
                        const Vector& x_hat, const Vector& d_hat_clipped) {
  check_dim(x_hat, d_hat_clipped.size(), "compute_V");
  double acc = 0.0;
  for (const Vector& x : worker_xs) {
    check_dim(x, x_hat.size(), "compute_V worker");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double diff = x[i] - x_hat[i];
      s += d_hat_clipped[i] * diff * diff;
    }
    acc += s;
  }
  return acc / static_cast<double>(worker_xs.size());
}

/// Incrementally maintained weighted average with weights
/// w_t = (1 - q)^{-(t+1)}, q = gamma*mu/(2*Gamma). The weights grow
/// geometrically, so the average is kept as a normalized convex combination
/// (the raw weights are never materialized, which cannot overflow).
/// q = 0 degenerates to the plain running mean.
class WeightedAverage {
 public:
  WeightedAverage(double q, std::size_t d) : q_(q), avg_(zeros(d)) {
    if (q < 0.0 || q >= 1.0) {
      throw ConfigError("weighted average: gamma*mu/(2*Gamma) must lie in [0, 1)");
    }
  }

  void add(const Vector& x) {
    check_dim(x, avg_.size(), "weighted average");
    if (n_ == 0) {
      avg_ = x;
      s_ = 1.0;
    } else {
      // s_new = W_{t+1}/w_{t+1}; avg carries W_t/w_{t+1} = s*(1-q) old mass.
      const double carried = s_ * (1.0 - q_);
      const double s_new = carried + 1.0;
      for (std::size_t i = 0; i < avg_.size(); ++i) {
        avg_[i] = (carried * avg_[i] + x[i]) / s_new;
      }
      s_ = s_new;
    }
    n_ += 1;
  }

  std::size_t count() const { return n_; }
  const Vector& value() const { return avg_; }

 private:
  double q_;
  double s_ = 0.0;
  Vector avg_;
  std::size_t n_ = 0;
};

/// One-shot form over a full trajectory of averaged iterates.
inline Vector weighted_average(const std::vector<Vector>& x_hats, double gamma,
                               double mu, double gamma_cap) {
  if (x_hats.empty()) throw ConfigError("weighted_average: empty trajectory");
  const double q = gamma * mu / (2.0 * gamma_cap);
  if (q >= 1.0) {
    throw ConfigError("weighted_average: gamma*mu/(2*Gamma) must be < 1");
  }
  WeightedAverage acc(q, x_hats.front().size());
  for (const Vector& x : x_hats) acc.add(x);
  return acc.value();
}

namespace detail {

struct WorkerState {
  std::size_t id = 0;
  Vector x;
  RngStream rng{0};
  Vector momentum_buf;
  std::optional<precond::DiagPrecondState> local_precond;
  double max_grad_entry = 0.0;
  bool local_growth_ok = true;
};

/// Average of batch_size stochastic draws (or the exact gradient), tracking
/// the largest entry seen.
inline Vector draw_gradient(const problems::ProblemSuite& suite, std::size_t m,
                            const Vector& x, RngStream& rng,
                            std::size_t batch_size, bool full_batch,
                            double& max_entry) {
  Vector g;
  if (full_batch) {
    g = suite.grad(m, x);
  } else if (batch_size == 1) {
    g = suite.stoch_grad(m, x, rng);
  } else {
    g = suite.stoch_grad(m, x, rng);
    for (std::size_t b = 1; b < batch_size; ++b) {
      add_in_place(g, suite.stoch_grad(m, x, rng));
    }
    scale_in_place(g, 1.0 / static_cast<double>(batch_size));
  }
  max_entry = std::max(max_entry, max_abs(g));
  return g;
}

/// Runs fn(m) for every worker, optionally across threads. Worker bodies may
/// only touch their own state, so scheduling cannot change results.
template <typename Fn>
inline void for_each_worker(std::size_t M, int threads, Fn&& fn) {
  if (threads <= 1 || M <= 1) {
    for (std::size_t m = 0; m < M; ++m) fn(m);
    return;
  }
  const std::size_t n_threads = std::min<std::size_t>(threads, M);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t k = 0; k < n_threads; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t m = k; m < M; m += n_threads) fn(m);
    });
  }
  for (auto& th : pool) th.join();
}

/// x_next = (1/M) sum_j proposals[j], summed in ascending worker index. The
/// minibatch baseline reuses this expression, which is what makes the H = 1
/// reduction identity exact at the bit level.
inline Vector average_ascending(const std::vector<Vector>& proposals) {
  Vector acc = zeros(proposals.front().size());
  for (const Vector& p : proposals) add_in_place(acc, p);
  scale_in_place(acc, 1.0 / static_cast<double>(proposals.size()));
  return acc;
}

inline bool diverged_iterate(const Vector& x) {
  if (!all_finite(x)) return true;
  return norm_sq(x) > 1e24;  // ||x|| > 1e12
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

/// Local SGD with a shared clipped diagonal preconditioner. Between sync
/// times every worker steps on its own data; the step arriving at a sync time
/// averages all proposals (ascending worker order); at the sync time itself
/// the server refreshes D-hat from a curvature estimate at the averaged
/// iterate, using its own stream. The trajectory is a pure function of
/// (suite, config); thread count only changes wall time.
inline RunRecord run_savic(const problems::ProblemSuite& suite,
                           const SavicConfig& cfg, int threads = 1) {
  const std::size_t d = suite.dim();
  const std::size_t M = suite.num_workers();
  cfg.validate(d);

  const auto [x_star, f_star] = problems::exact_optimum(suite);
  const bool local_mode = cfg.scaling_mode == ScalingMode::local_experimental;

  std::vector<detail::WorkerState> workers(M);
  for (std::size_t m = 0; m < M; ++m) {
    workers[m].id = m;
    workers[m].x = cfg.x0;
    workers[m].rng = RngStream::derive(cfg.master_seed, StreamDomain::worker, m);
    if (cfg.momentum > 0.0) workers[m].momentum_buf = zeros(d);
    if (local_mode) workers[m].local_precond.emplace(cfg.precond, d);
  }
  RngStream server_rng = RngStream::derive(cfg.master_seed, StreamDomain::server, 0);
  precond::DiagPrecondState global_precond(cfg.precond, d);
  double server_max_grad = 0.0;

  RunRecord rec;
  rec.x_star = x_star;
  rec.f_star = f_star;
  rec.reported_H = cfg.schedule.max_gap(cfg.T);
  rec.rows.reserve(cfg.T + 1);

  // Theorem-style weights need gamma*mu/(2*Gamma) < 1; configs outside that
  // regime (divergence probes) fall back to the plain running mean.
  double q = cfg.gamma * suite.mu() / (2.0 * cfg.precond.gamma_cap);
  if (q >= 1.0) q = 0.0;
  WeightedAverage wavg(q, d);

  Vector x_hat = cfg.x0;
  std::vector<Vector> proposals(M, zeros(d));

  auto local_min_clipped = [&]() {
    double v = std::numeric_limits<double>::infinity();
    for (const auto& w : workers) v = std::min(v, min_entry(w.local_precond->clipped()));
    return v;
  };
  auto local_max_clipped = [&]() {
    double v = -std::numeric_limits<double>::infinity();
    for (const auto& w : workers) v = std::max(v, max_entry(w.local_precond->clipped()));
    return v;
  };

  for (std::size_t t = 0;; ++t) {
    const bool sync_row = cfg.schedule.is_sync(t);
    bool growth_ok = true;

    if (sync_row && !local_mode) {
      // Consensus holds here; refresh the shared preconditioner at x_hat.
      if (cfg.precond.rule != precond::Rule::identity) {
        const std::size_t m = (M == 1) ? 0 : server_rng.uniform_index(M);
        Vector h = precond::estimate_H(suite, m, x_hat, server_rng, cfg.precond,
                                       &server_max_grad);
        const Vector prev = global_precond.clipped();
        const double beta = global_precond.update(h);
        growth_ok = precond::check_growth(prev, global_precond.clipped(), beta,
                                          cfg.precond);
      }
    }
    if (local_mode) {
      growth_ok = true;
      for (const auto& w : workers) growth_ok = growth_ok && w.local_growth_ok;
    }

    Row row;
    row.t = t;
    row.phase = sync_row ? Phase::sync : Phase::local;
    row.x_hat = x_hat;
    row.dist_sq = dist_sq(x_hat, x_star);
    row.f_gap = suite.global_loss(x_hat) - f_star;
    if (local_mode) {
      row.V = compute_V([&] {
        std::vector<Vector> xs;
        xs.reserve(M);
        for (const auto& w : workers) xs.push_back(w.x);
        return xs;
      }(), x_hat, ones(d));
      row.d_min = local_min_clipped();
      row.d_max = local_max_clipped();
    } else {
      std::vector<Vector> xs;
      xs.reserve(M);
      for (const auto& w : workers) xs.push_back(w.x);
      row.V = compute_V(xs, x_hat, global_precond.clipped());
      row.d_min = min_entry(global_precond.clipped());
      row.d_max = max_entry(global_precond.clipped());
    }
    row.growth_ok = growth_ok;
    double cdev = 0.0;
    for (const auto& w : workers) {
      for (std::size_t i = 0; i < d; ++i) {
        cdev = std::max(cdev, std::fabs(w.x[i] - x_hat[i]));
      }
    }
    row.consensus_dev = cdev;
    rec.rows.push_back(std::move(row));

    if (t == cfg.T || rec.diverged) break;
    wavg.add(x_hat);  // x_bar averages x_hat_0 .. x_hat_{T-1}

    // Step t -> t+1.
    detail::for_each_worker(M, threads, [&](std::size_t m) {
      auto& w = workers[m];
      if (local_mode) {
        // Experimental per-device scaling: refresh the worker's own matrix
        // every iteration at its own iterate, from its own stream.
        Vector h = precond::estimate_H(suite, m, w.x, w.rng, cfg.precond,
                                       &w.max_grad_entry);
        const Vector prev = w.local_precond->clipped();
        const double beta = w.local_precond->update(h);
        w.local_growth_ok = precond::check_growth(prev, w.local_precond->clipped(),
                                                  beta, cfg.precond);
      }
      const Vector& clip = local_mode ? w.local_precond->clipped()
                                      : global_precond.clipped();
      Vector g = detail::draw_gradient(suite, m, w.x, w.rng, cfg.batch_size,
                                       cfg.full_batch, w.max_grad_entry);
      Vector dir(d);
      for (std::size_t i = 0; i < d; ++i) dir[i] = g[i] / clip[i];
      if (cfg.momentum > 0.0) {
        for (std::size_t i = 0; i < d; ++i) {
          w.momentum_buf[i] = cfg.momentum * w.momentum_buf[i] + dir[i];
        }
        dir = w.momentum_buf;
      }
      Vector& p = proposals[m];
      for (std::size_t i = 0; i < d; ++i) p[i] = w.x[i] - cfg.gamma * dir[i];
    });

    if (cfg.schedule.is_sync(t + 1)) {
      Vector avg = detail::average_ascending(proposals);
      for (auto& w : workers) w.x = avg;
      x_hat = std::move(avg);
    } else {
      for (std::size_t m = 0; m < M; ++m) workers[m].x = proposals[m];
      x_hat = detail::average_ascending(proposals);
    }

    if (detail::diverged_iterate(x_hat) ||
        std::any_of(workers.begin(), workers.end(), [](const auto& w) {
          return detail::diverged_iterate(w.x);
        })) {
      rec.diverged = true;
      rec.divergence_t = t + 1;
      break;  // partial record: rows up to the last finite state
    }
  }

  rec.x_bar = wavg.count() > 0 ? wavg.value() : cfg.x0;
  rec.x_bar_f_gap = suite.global_loss(rec.x_bar) - f_star;
  double max_grad = server_max_grad;
  for (const auto& w : workers) max_grad = std::max(max_grad, w.max_grad_entry);
  rec.observed_max_grad_entry = max_grad;
  return rec;
}

/// Mini-batch SGD baseline on a single shared iterate, drawing from the same
/// per-worker streams as run_savic would. With the identity preconditioner,
/// H = 1 and zero momentum, run_savic reproduces this bitwise.
inline RunRecord run_minibatch_sgd(const problems::ProblemSuite& suite,
                                   const SavicConfig& cfg, int threads = 1) {
  const std::size_t d = suite.dim();
  const std::size_t M = suite.num_workers();
  cfg.validate(d, /*allow_zero_gamma=*/true);
  if (cfg.momentum != 0.0) {
    throw ConfigError("minibatch_sgd: momentum is not part of the baseline");
  }

  const auto [x_star, f_star] = problems::exact_optimum(suite);
  std::vector<detail::WorkerState> workers(M);
  for (std::size_t m = 0; m < M; ++m) {
    workers[m].id = m;
    workers[m].rng = RngStream::derive(cfg.master_seed, StreamDomain::worker, m);
  }

  RunRecord rec;
  rec.x_star = x_star;
  rec.f_star = f_star;
  rec.reported_H = 1;
  rec.rows.reserve(cfg.T + 1);

  double q = cfg.gamma * suite.mu() / (2.0 * cfg.precond.gamma_cap);
  if (q >= 1.0) q = 0.0;
  WeightedAverage wavg(q, d);

  Vector x = cfg.x0;
  std::vector<Vector> proposals(M, zeros(d));

  for (std::size_t t = 0;; ++t) {
    Row row;
    row.t = t;
    row.phase = Phase::sync;
    row.x_hat = x;
    row.dist_sq = dist_sq(x, x_star);
    row.f_gap = suite.global_loss(x) - f_star;
    row.V = 0.0;
    row.d_min = 1.0;
    row.d_max = 1.0;
    row.growth_ok = true;
    rec.rows.push_back(std::move(row));

    if (t == cfg.T || rec.diverged) break;
    wavg.add(x);

    detail::for_each_worker(M, threads, [&](std::size_t m) {
      auto& w = workers[m];
      Vector g = detail::draw_gradient(suite, m, x, w.rng, cfg.batch_size,
                                       cfg.full_batch, w.max_grad_entry);
      Vector& p = proposals[m];
      for (std::size_t i = 0; i < d; ++i) {
        p[i] = x[i] - cfg.gamma * (g[i] / 1.0);
      }
    });
    x = detail::average_ascending(proposals);

    if (detail::diverged_iterate(x)) {
      rec.diverged = true;
      rec.divergence_t = t + 1;
      break;
    }
  }

  rec.x_bar = wavg.count() > 0 ? wavg.value() : cfg.x0;
  rec.x_bar_f_gap = suite.global_loss(rec.x_bar) - f_star;
  double max_grad = 0.0;
  for (const auto& w : workers) max_grad = std::max(max_grad, w.max_grad_entry);
  rec.observed_max_grad_entry = max_grad;
  return rec;
}

/// Adaptive federated baseline: sampled clients run K local SGD steps, the
/// server folds the averaged model delta into a momentum buffer and an
/// AdaGrad-style accumulator, then steps x += eta * m/(sqrt(v) + tau).
/// Client sampling is uniform without replacement from the sampler stream.
inline RunRecord run_fedadagrad(const problems::ProblemSuite& suite,
                                const FedAdaGradConfig& cfg, int threads = 1) {
  const std::size_t d = suite.dim();
  const std::size_t M = suite.num_workers();
  cfg.validate(d);

  const auto [x_star, f_star] = problems::exact_optimum(suite);
  std::vector<detail::WorkerState> workers(M);
  for (std::size_t m = 0; m < M; ++m) {
    workers[m].id = m;
    workers[m].rng = RngStream::derive(cfg.master_seed, StreamDomain::worker, m);
  }
  RngStream sampler =
      RngStream::derive(cfg.master_seed, StreamDomain::client_sampling, 0);

  const auto n_sampled = std::min<std::size_t>(
      M, std::max<std::size_t>(
             1, static_cast<std::size_t>(std::ceil(
                    cfg.participation * static_cast<double>(M) - 1e-12))));

  RunRecord rec;
  rec.x_star = x_star;
  rec.f_star = f_star;
  rec.reported_H = cfg.K;
  rec.rows.reserve(cfg.T + 1);

  Vector x = cfg.x0;
  Vector m_buf = zeros(d);
  Vector v = filled(d, cfg.v_init);
  std::vector<Vector> deltas(M, zeros(d));
  std::vector<std::size_t> index(M);

  for (std::size_t t = 0;; ++t) {
    Row row;
    row.t = t;
    row.phase = Phase::sync;
    row.x_hat = x;
    row.dist_sq = dist_sq(x, x_star);
    row.f_gap = suite.global_loss(x) - f_star;
    row.V = 0.0;
    // Effective diagonal scale of the server step.
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      const double s = std::sqrt(v[i]) + cfg.tau;
      dmin = std::min(dmin, s);
      dmax = std::max(dmax, s);
    }
    row.d_min = dmin;
    row.d_max = dmax;
    row.growth_ok = true;  // v is nondecreasing by construction
    rec.rows.push_back(std::move(row));

    if (t == cfg.T || rec.diverged) break;

    // Sample clients without replacement, then process them in ascending
    // order so the averaged delta is scheduling-independent.
    std::iota(index.begin(), index.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_sampled; ++i) {
      const std::size_t j = i + sampler.uniform_index(M - i);
      std::swap(index[i], index[j]);
    }
    std::vector<std::size_t> sampled(index.begin(), index.begin() + n_sampled);
    std::sort(sampled.begin(), sampled.end());

    detail::for_each_worker(sampled.size(), threads, [&](std::size_t si) {
      const std::size_t i = sampled[si];
      auto& w = workers[i];
      Vector y = x;
      for (std::size_t k = 0; k < cfg.K; ++k) {
        Vector g = detail::draw_gradient(suite, i, y, w.rng, cfg.batch_size,
                                         cfg.full_batch, w.max_grad_entry);
        axpy(-cfg.eta_l, g, y);
      }
      Vector& delta = deltas[i];
      for (std::size_t idx = 0; idx < d; ++idx) delta[idx] = y[idx] - x[idx];
    });

    Vector delta_t = zeros(d);
    for (std::size_t i : sampled) add_in_place(delta_t, deltas[i]);
    scale_in_place(delta_t, 1.0 / static_cast<double>(sampled.size()));

    for (std::size_t i = 0; i < d; ++i) {
      m_buf[i] = cfg.beta1 * m_buf[i] + (1.0 - cfg.beta1) * delta_t[i];
      v[i] += delta_t[i] * delta_t[i];
      x[i] += cfg.eta * m_buf[i] / (std::sqrt(v[i]) + cfg.tau);
    }

    if (detail::diverged_iterate(x)) {
      rec.diverged = true;
      rec.divergence_t = t + 1;
      break;
    }
  }

  // No Theorem-2 weighting is defined for this baseline; report the final
  // server iterate as the averaged output.
  rec.x_bar = x;
  rec.x_bar_f_gap = rec.rows.back().f_gap;
  double max_grad = 0.0;
  for (const auto& w : workers) max_grad = std::max(max_grad, w.max_grad_entry);
  rec.observed_max_grad_entry = max_grad;
  return rec;
}

}  // namespace savic::engine
