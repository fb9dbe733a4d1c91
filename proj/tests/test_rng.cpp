#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "savic/rng.hpp"

using namespace savic;

TEST_CASE("streams are pure functions of (key, counter)") {
  RngStream a = RngStream::derive(42, StreamDomain::worker, 3);
  RngStream b = RngStream::derive(42, StreamDomain::worker, 3);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct ids and domains give distinct streams") {
  RngStream a = RngStream::derive(42, StreamDomain::worker, 0);
  RngStream b = RngStream::derive(42, StreamDomain::worker, 1);
  RngStream c = RngStream::derive(42, StreamDomain::server, 0);
  CHECK(a.next_u64() != b.next_u64());
  RngStream a2 = RngStream::derive(42, StreamDomain::worker, 0);
  CHECK(a2.next_u64() != c.next_u64());
}

TEST_CASE("uniform01 lies in [0, 1) and has mean near one half") {
  RngStream rng(123);
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    acc += u;
  }
  CHECK(acc / n == Catch::Approx(0.5).margin(0.005));
}

TEST_CASE("normal draws have unit variance") {
  RngStream rng(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  CHECK(mean == Catch::Approx(0.0).margin(0.01));
  CHECK(s2 / n - mean * mean == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("rademacher draws are balanced signs") {
  RngStream rng(77);
  int pos = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double r = rng.rademacher();
    REQUIRE((r == 1.0 || r == -1.0));
    pos += r > 0 ? 1 : 0;
  }
  CHECK(static_cast<double>(pos) / n == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("uniform_index covers the range") {
  RngStream rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[rng.uniform_index(7)] += 1;
  for (int c : counts) CHECK(c > 8000);
}
