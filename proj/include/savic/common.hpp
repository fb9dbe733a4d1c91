#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace savic {

/// Dense coordinate vector of the model dimension d.
using Vector = std::vector<double>;

/// Invalid configuration or input (bad dimensions, out-of-range parameters,
/// unsolvable problem instances). Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A violated operation contract (caller bug, not user input).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

inline void check_dim(const Vector& v, std::size_t d, const char* what) {
  if (v.size() != d) {
    throw ConfigError(std::string(what) + ": dimension mismatch, got " +
                      std::to_string(v.size()) + ", expected " +
                      std::to_string(d));
  }
}

inline Vector zeros(std::size_t d) { return Vector(d, 0.0); }
inline Vector ones(std::size_t d) { return Vector(d, 1.0); }
inline Vector filled(std::size_t d, double v) { return Vector(d, v); }

inline double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(const Vector& v) { return dot(v, v); }
inline double norm(const Vector& v) { return std::sqrt(norm_sq(v)); }

/// Σ_i w_i v_i² (norm induced by a diagonal matrix with entries w).
inline double weighted_norm_sq(const Vector& v, const Vector& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += w[i] * v[i] * v[i];
  return s;
}

inline double dist_sq(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

/// y += a*x
inline void axpy(double a, const Vector& x, Vector& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void add_in_place(Vector& y, const Vector& x) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += x[i];
}

inline void scale_in_place(Vector& y, double a) {
  for (double& v : y) v *= a;
}

inline double max_abs(const Vector& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline double min_entry(const Vector& v) {
  double m = v.empty() ? 0.0 : v[0];
  for (double x : v) m = std::min(m, x);
  return m;
}

inline double max_entry(const Vector& v) {
  double m = v.empty() ? 0.0 : v[0];
  for (double x : v) m = std::max(m, x);
  return m;
}

inline bool all_finite(const Vector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace savic
