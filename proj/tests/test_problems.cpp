#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "savic/problems.hpp"

using namespace savic;
using namespace savic::problems;

namespace {

QuadraticWorkerProblem::Sample quad_sample(std::vector<double> a, Vector b) {
  return {std::move(a), std::move(b)};
}

ProblemSuite single_quad_suite(std::vector<double> a, Vector b, double mu,
                               double L) {
  const std::size_t d = b.size();
  std::vector<WorkerProblem> ws;
  ws.emplace_back(QuadraticWorkerProblem(d, {quad_sample(std::move(a), std::move(b))}));
  return ProblemSuite(std::move(ws), Regime::identical, 0.0, mu, L);
}

/// Central finite difference of the worker loss, coordinate by coordinate.
Vector fd_grad(const ProblemSuite& suite, std::size_t m, const Vector& x,
               double h = 1e-4) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::fabs(x[i]));
    xp[i] = x[i] + step;
    xm[i] = x[i] - step;
    g[i] = (suite.worker_loss(m, xp) - suite.worker_loss(m, xm)) / (2.0 * step);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

double rel_err(const Vector& got, const Vector& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(1.0, std::sqrt(den));
}

}  // namespace

TEST_CASE("quadratic gradient is A x - b") {
  auto suite = single_quad_suite({2.0}, {0.0}, 2.0, 2.0);
  Vector g = suite.grad(0, {3.0});
  REQUIRE(g.size() == 1);
  CHECK(g[0] == Catch::Approx(6.0).margin(1e-14));
}

TEST_CASE("gradient vanishes at the exact optimum") {
  QuadraticSuiteSpec spec;
  spec.M = 3;
  spec.d = 6;
  spec.samples_per_worker = 4;
  spec.mu = 0.5;
  spec.L = 8.0;
  spec.regime = Regime::heterogeneous;
  spec.seed = 11;
  auto suite = make_quadratic_suite(spec);
  auto [x_star, f_star] = exact_optimum(suite);
  CHECK(norm(suite.global_grad(x_star)) < 1e-10);
  // f* really is the minimum locally.
  Vector bump = x_star;
  bump[0] += 1e-3;
  CHECK(suite.global_loss(bump) >= f_star);
}

TEST_CASE("logreg gradient at zero is -y a / 2") {
  std::vector<LogRegWorkerProblem::Row> rows{{{1.0, 0.0}, +1.0}};
  std::vector<WorkerProblem> ws;
  ws.emplace_back(LogRegWorkerProblem(2, std::move(rows), 0.0));
  ProblemSuite suite(std::move(ws), Regime::identical, 0.0, 0.0, 0.25);
  Vector g = suite.grad(0, {0.0, 0.0});
  CHECK(g[0] == Catch::Approx(-0.5).margin(1e-14));
  CHECK(g[1] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("grad rejects dimension mismatch") {
  auto suite = single_quad_suite({2.0}, {0.0}, 2.0, 2.0);
  CHECK_THROWS_AS(suite.grad(0, {1.0, 2.0}), ConfigError);
}

TEST_CASE("stoch_grad on a single-sample worker equals grad exactly") {
  auto suite = single_quad_suite({{3.0}}, {1.0}, 3.0, 3.0);
  RngStream rng = RngStream::derive(5, StreamDomain::worker, 0);
  Vector x{0.7};
  Vector s = suite.stoch_grad(0, x, rng);
  Vector g = suite.grad(0, x);
  CHECK(s == g);
}

TEST_CASE("stoch_grad is unbiased: monte-carlo mean within 3 standard errors") {
  // Two-sample quadratic worker.
  std::vector<WorkerProblem> ws;
  ws.emplace_back(QuadraticWorkerProblem(
      2, {quad_sample({2.0, 0.0, 0.0, 1.0}, {1.0, -1.0}),
          quad_sample({4.0, 1.0, 1.0, 3.0}, {0.0, 2.0})}));
  ProblemSuite suite(std::move(ws), Regime::heterogeneous, 0.0, 1.0, 5.0);
  Vector x{0.3, -0.8};
  Vector want = suite.grad(0, x);

  const int n = 100000;
  RngStream rng = RngStream::derive(17, StreamDomain::worker, 0);
  Vector mean = zeros(2);
  Vector m2 = zeros(2);  // per-coordinate sum of squares for the SE estimate
  for (int k = 0; k < n; ++k) {
    Vector g = suite.stoch_grad(0, x, rng);
    for (std::size_t i = 0; i < 2; ++i) {
      mean[i] += g[i];
      m2[i] += g[i] * g[i];
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    mean[i] /= n;
    const double var = m2[i] / n - mean[i] * mean[i];
    const double se = std::sqrt(std::max(var, 1e-30) / n);
    INFO("coordinate " << i);
    CHECK(std::fabs(mean[i] - want[i]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("identical-regime gaussian noise has total variance sigma^2") {
  auto suite = [] {
    std::vector<WorkerProblem> ws;
    ws.emplace_back(QuadraticWorkerProblem(
        4, {quad_sample({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1},
                        zeros(4))}));
    return ProblemSuite(std::move(ws), Regime::identical, 1.0, 1.0, 1.0);
  }();
  Vector x = zeros(4);
  Vector g0 = suite.grad(0, x);
  RngStream rng = RngStream::derive(23, StreamDomain::worker, 0);
  const int n = 100000;
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    Vector g = suite.stoch_grad(0, x, rng);
    total += dist_sq(g, g0);  // single sample, so all deviation is noise
  }
  total /= n;
  CHECK(total == Catch::Approx(1.0).epsilon(0.05));
}

TEST_CASE("hvp matches direct matrix multiply and is linear") {
  std::vector<WorkerProblem> ws;
  ws.emplace_back(QuadraticWorkerProblem(2, {quad_sample({2, 1, 1, 3}, zeros(2))}));
  ProblemSuite suite(std::move(ws), Regime::identical, 0.0, 1.0, 4.0);
  Vector hv = suite.hvp(0, zeros(2), {1.0, -1.0}, 0);
  CHECK(hv[0] == Catch::Approx(1.0).margin(1e-14));
  CHECK(hv[1] == Catch::Approx(-2.0).margin(1e-14));
  Vector hz = suite.hvp(0, zeros(2), zeros(2), 0);
  CHECK(norm(hz) == 0.0);
}

TEST_CASE("logreg hvp matches finite differences of the gradient") {
  HeteroLogRegSpec spec;
  spec.M = 2;
  spec.d = 5;
  spec.rows_per_worker = 6;
  spec.skew = 0.5;
  spec.lambda = 0.3;
  spec.seed = 31;
  auto suite = generate_heterogeneous(spec);
  RngStream rng = RngStream::derive(57, StreamDomain::worker, 3);
  Vector x = rng.normal_vec(5);
  Vector v = rng.normal_vec(5);
  const double h = 1e-5;
  // Central difference of the SAMPLE gradient along v.
  const std::size_t j = 2;
  Vector xp = x, xm = x;
  axpy(h, v, xp);
  axpy(-h, v, xm);
  Vector gp = suite.sample_grad(0, j, xp);
  Vector gm = suite.sample_grad(0, j, xm);
  Vector fd(5);
  for (std::size_t i = 0; i < 5; ++i) fd[i] = (gp[i] - gm[i]) / (2.0 * h);
  Vector hv = suite.hvp(0, x, v, j);
  CHECK(rel_err(hv, fd) < 1e-5);
}

TEST_CASE("exact_optimum averages the two linear systems") {
  std::vector<WorkerProblem> ws;
  ws.emplace_back(QuadraticWorkerProblem(1, {quad_sample({1.0}, {2.0})}));
  ws.emplace_back(QuadraticWorkerProblem(1, {quad_sample({1.0}, {0.0})}));
  ProblemSuite suite(std::move(ws), Regime::heterogeneous, 0.0, 1.0, 1.0);
  auto [x_star, f_star] = exact_optimum(suite);
  CHECK(x_star[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("identical regime: global optimum minimizes each worker too") {
  QuadraticSuiteSpec spec;
  spec.M = 4;
  spec.d = 5;
  spec.samples_per_worker = 3;
  spec.mu = 1.0;
  spec.L = 6.0;
  spec.regime = Regime::identical;
  spec.seed = 3;
  auto suite = make_quadratic_suite(spec);
  auto [x_star, f_star] = exact_optimum(suite);
  for (std::size_t m = 0; m < suite.num_workers(); ++m) {
    CHECK(norm(suite.grad(m, x_star)) < 1e-10);
  }
}

TEST_CASE("exact_optimum over a random 10-worker suite closes the loop") {
  QuadraticSuiteSpec spec;
  spec.M = 10;
  spec.d = 8;
  spec.samples_per_worker = 2;
  spec.mu = 0.2;
  spec.L = 20.0;
  spec.regime = Regime::heterogeneous;
  spec.seed = 99;
  auto suite = make_quadratic_suite(spec);
  auto [x_star, f_star] = exact_optimum(suite);
  CHECK(norm(suite.global_grad(x_star)) < 1e-10);
}

TEST_CASE("singular mean matrix has no unique optimum") {
  std::vector<WorkerProblem> ws;
  ws.emplace_back(
      QuadraticWorkerProblem(2, {quad_sample({1, 0, 0, 0}, {1.0, 1.0})}));
  ProblemSuite suite(std::move(ws), Regime::identical, 0.0, 0.0, 1.0);
  CHECK_THROWS_AS(exact_optimum(suite), ConfigError);
}

TEST_CASE("logreg newton reaches the optimum with lambda > 0") {
  HeteroLogRegSpec spec;
  spec.M = 3;
  spec.d = 4;
  spec.rows_per_worker = 12;
  spec.skew = 0.6;
  spec.lambda = 0.05;
  spec.seed = 8;
  auto suite = generate_heterogeneous(spec);
  auto [x_star, f_star] = exact_optimum(suite);
  CHECK(norm(suite.global_grad(x_star)) < 1e-10);
}

TEST_CASE("sigma_dif_sq examples") {
  SECTION("interpolating identical suite gives zero") {
    auto suite = single_quad_suite({1.0}, {0.0}, 1.0, 1.0);
    auto [x_star, f_star] = exact_optimum(suite);
    CHECK(sigma_dif_sq(suite, x_star) == Catch::Approx(0.0).margin(1e-24));
  }
  SECTION("two opposed workers give one") {
    std::vector<WorkerProblem> ws;
    ws.emplace_back(QuadraticWorkerProblem(1, {quad_sample({1.0}, {1.0})}));
    ws.emplace_back(QuadraticWorkerProblem(1, {quad_sample({1.0}, {-1.0})}));
    ProblemSuite suite(std::move(ws), Regime::heterogeneous, 0.0, 1.0, 1.0);
    auto [x_star, f_star] = exact_optimum(suite);
    REQUIRE(x_star[0] == Catch::Approx(0.0).margin(1e-14));
    CHECK(sigma_dif_sq(suite, x_star) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("matches a monte-carlo estimate on a random heterogeneous suite") {
    QuadraticSuiteSpec spec;
    spec.M = 3;
    spec.d = 4;
    spec.samples_per_worker = 5;
    spec.mu = 1.0;
    spec.L = 4.0;
    spec.regime = Regime::heterogeneous;
    spec.worker_shift = 0.8;
    spec.sample_spread = 0.6;
    spec.seed = 12;
    auto suite = make_quadratic_suite(spec);
    auto [x_star, f_star] = exact_optimum(suite);
    const double exact = sigma_dif_sq(suite, x_star);
    REQUIRE(exact > 0.0);
    RngStream rng = RngStream::derive(4, StreamDomain::worker, 9);
    const int per_worker = 1000000 / 3;
    double mc = 0.0;
    for (std::size_t m = 0; m < suite.num_workers(); ++m) {
      double acc = 0.0;
      for (int k = 0; k < per_worker; ++k) {
        acc += norm_sq(suite.stoch_grad(m, x_star, rng));
      }
      mc += acc / per_worker;
    }
    mc /= static_cast<double>(suite.num_workers());
    CHECK(mc == Catch::Approx(exact).epsilon(0.01));
  }
}

TEST_CASE("heterogeneous logreg generator honors the skew contract") {
  SECTION("skew 0.7 with rows divisible by classes") {
    const std::size_t M = 10, n = 40;
    for (std::size_t m = 0; m < M; ++m) {
      auto seq = hetero_class_sequence(M, n, 0.7, m);
      std::size_t main_count = 0;
      for (std::size_t c : seq) main_count += (c == m) ? 1 : 0;
      CHECK(static_cast<double>(main_count) / static_cast<double>(n) ==
            Catch::Approx(0.7).margin(1e-12));
    }
  }
  SECTION("skew 1/M splits classes equally") {
    const std::size_t M = 4, n = 16;
    for (std::size_t m = 0; m < M; ++m) {
      auto seq = hetero_class_sequence(M, n, 1.0 / M, m);
      std::vector<std::size_t> counts(M, 0);
      for (std::size_t c : seq) counts[c] += 1;
      for (std::size_t c = 0; c < M; ++c) CHECK(counts[c] == n / M);
    }
  }
  SECTION("same seed twice gives byte-identical suites") {
    HeteroLogRegSpec spec;
    spec.M = 4;
    spec.d = 3;
    spec.rows_per_worker = 10;
    spec.skew = 0.5;
    spec.lambda = 0.1;
    spec.seed = 77;
    auto a = generate_heterogeneous(spec);
    auto b = generate_heterogeneous(spec);
    CHECK(to_json(a).dump() == to_json(b).dump());
  }
  SECTION("invalid skew is rejected") {
    HeteroLogRegSpec spec;
    spec.M = 5;
    spec.skew = 0.1;  // below 1/M
    CHECK_THROWS_AS(generate_heterogeneous(spec), ConfigError);
    spec.skew = 1.2;
    CHECK_THROWS_AS(generate_heterogeneous(spec), ConfigError);
  }
}

TEST_CASE("analytic gradients match central finite differences at 100 points") {
  QuadraticSuiteSpec qspec;
  qspec.M = 2;
  qspec.d = 5;
  qspec.samples_per_worker = 3;
  qspec.mu = 0.5;
  qspec.L = 7.0;
  qspec.regime = Regime::heterogeneous;
  qspec.seed = 21;
  auto quad = make_quadratic_suite(qspec);

  HeteroLogRegSpec lspec;
  lspec.M = 2;
  lspec.d = 5;
  lspec.rows_per_worker = 8;
  lspec.skew = 0.5;
  lspec.lambda = 0.2;
  lspec.seed = 22;
  auto logreg = generate_heterogeneous(lspec);

  RngStream rng = RngStream::derive(100, StreamDomain::worker, 1);
  for (int k = 0; k < 100; ++k) {
    Vector x = rng.normal_vec(5);
    const std::size_t mq = rng.uniform_index(quad.num_workers());
    CHECK(rel_err(quad.grad(mq, x), fd_grad(quad, mq, x)) < 1e-5);
    const std::size_t ml = rng.uniform_index(logreg.num_workers());
    CHECK(rel_err(logreg.grad(ml, x), fd_grad(logreg, ml, x)) < 1e-5);
  }
}

TEST_CASE("smoothness and strong-convexity certificates hold") {
  QuadraticSuiteSpec spec;
  spec.M = 3;
  spec.d = 6;
  spec.samples_per_worker = 2;
  spec.mu = 0.7;
  spec.L = 9.0;
  spec.regime = Regime::heterogeneous;
  spec.seed = 5;
  auto quad = make_quadratic_suite(spec);

  HeteroLogRegSpec lspec;
  lspec.M = 3;
  lspec.d = 6;
  lspec.rows_per_worker = 10;
  lspec.skew = 0.4;
  lspec.lambda = 0.15;
  lspec.seed = 6;
  auto logreg = generate_heterogeneous(lspec);

  RngStream rng = RngStream::derive(41, StreamDomain::worker, 2);
  auto certify = [&](const ProblemSuite& suite) {
    for (int k = 0; k < 50; ++k) {
      Vector x = rng.normal_vec(suite.dim());
      Vector y = rng.normal_vec(suite.dim());
      for (std::size_t m = 0; m < suite.num_workers(); ++m) {
        Vector gx = suite.grad(m, x);
        Vector gy = suite.grad(m, y);
        Vector diff(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) diff[i] = gx[i] - gy[i];
        CHECK(norm(diff) <=
              suite.smoothness() * std::sqrt(dist_sq(x, y)) * (1.0 + 1e-9) + 1e-12);
        const double lhs = suite.worker_loss(m, x) - suite.worker_loss(m, y);
        Vector xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xy[i] = x[i] - y[i];
        CHECK(lhs - dot(gy, xy) >= 0.5 * suite.mu() * dist_sq(x, y) - 1e-9);
      }
    }
  };
  certify(quad);
  certify(logreg);
}

TEST_CASE("enumerating sample indices reproduces grad exactly") {
  QuadraticSuiteSpec spec;
  spec.M = 2;
  spec.d = 3;
  spec.samples_per_worker = 7;
  spec.mu = 1.0;
  spec.L = 3.0;
  spec.regime = Regime::heterogeneous;
  spec.seed = 14;
  auto suite = make_quadratic_suite(spec);
  Vector x{0.2, -1.0, 0.5};
  for (std::size_t m = 0; m < suite.num_workers(); ++m) {
    Vector mean = zeros(3);
    for (std::size_t j = 0; j < suite.worker_samples(m); ++j) {
      add_in_place(mean, suite.sample_grad(m, j, x));
    }
    scale_in_place(mean, 1.0 / static_cast<double>(suite.worker_samples(m)));
    CHECK(mean == suite.grad(m, x));
  }
}

TEST_CASE("suite JSON round trip is lossless") {
  QuadraticSuiteSpec spec;
  spec.M = 2;
  spec.d = 3;
  spec.samples_per_worker = 2;
  spec.mu = 1.0;
  spec.L = 2.0;
  spec.regime = Regime::identical;
  spec.noise_sigma = 0.5;
  spec.seed = 61;
  auto suite = make_quadratic_suite(spec);
  auto j = to_json(suite);
  auto back = suite_from_json(j);
  CHECK(to_json(back).dump() == j.dump());

  HeteroLogRegSpec lspec;
  lspec.M = 2;
  lspec.d = 3;
  lspec.rows_per_worker = 4;
  lspec.skew = 0.5;
  lspec.lambda = 0.1;
  lspec.seed = 62;
  auto lsuite = generate_heterogeneous(lspec);
  auto lj = to_json(lsuite);
  CHECK(to_json(suite_from_json(lj)).dump() == lj.dump());
}

TEST_CASE("identical regime keeps byte-identical sample sets across workers") {
  QuadraticSuiteSpec spec;
  spec.M = 5;
  spec.d = 4;
  spec.samples_per_worker = 3;
  spec.mu = 1.0;
  spec.L = 5.0;
  spec.regime = Regime::identical;
  spec.seed = 2;
  auto suite = make_quadratic_suite(spec);
  const auto& w0 = std::get<QuadraticWorkerProblem>(suite.worker(0));
  for (std::size_t m = 1; m < suite.num_workers(); ++m) {
    const auto& wm = std::get<QuadraticWorkerProblem>(suite.worker(m));
    REQUIRE(wm.num_samples() == w0.num_samples());
    for (std::size_t j = 0; j < w0.num_samples(); ++j) {
      CHECK(wm.sample(j).a == w0.sample(j).a);
      CHECK(wm.sample(j).b == w0.sample(j).b);
    }
  }
}
