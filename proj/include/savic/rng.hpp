#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "savic/common.hpp"

namespace savic {

/// SplitMix64 finalizer. Full-avalanche 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Which logical consumer of randomness a stream belongs to. Keys derived
/// from distinct domains never collide, so workers, the server, suite
/// generation and ensemble seeding all draw from independent streams.
enum class StreamDomain : std::uint64_t {
  worker = 1,
  server = 2,
  suite = 3,
  ensemble = 4,
  client_sampling = 5,
};

/// Counter-based random stream: output n is a pure function of (key, n).
/// Each worker owns one stream, which makes runs reproducible regardless of
/// thread scheduling. The sequence is SplitMix64 seeded at `key`.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream derive(std::uint64_t master_seed, StreamDomain domain,
                          std::uint64_t id) {
    const auto d = static_cast<std::uint64_t>(domain);
    std::uint64_t key = mix64(master_seed + 0x9E3779B97F4A7C15ull * (d + 1));
    key = mix64(key + 0x9E3779B97F4A7C15ull * (id + 1));
    return RngStream(key);
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform index in [0, n). Modulo bias is negligible for desk-scale n.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller. Consumes two uniforms per draw.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double rademacher() { return (next_u64() & 1ull) ? 1.0 : -1.0; }

  Vector normal_vec(std::size_t d) {
    Vector v(d);
    for (double& x : v) x = normal();
    return v;
  }

  Vector rademacher_vec(std::size_t d) {
    Vector v(d);
    for (double& x : v) x = rademacher();
    return v;
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace savic
