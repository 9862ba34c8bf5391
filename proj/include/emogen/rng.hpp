#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "emogen/error.hpp"

namespace emogen {

// Deterministic 64-bit-state generator (splitmix64). All randomness in the
// project flows through this class so that a seed fixes every stream
// bit-for-bit, independent of platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform01_open_low() { return 1.0 - uniform01(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Box-Muller, no caching so the state stays a single 64-bit word.
  double normal() {
    double u1 = uniform01_open_low();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang; the a<1 case is boosted through a+1.
  double gamma(double a) {
    if (a <= 0.0) throw ContractError("gamma: shape must be positive");
    if (a < 1.0) {
      double u = uniform01_open_low();
      return gamma(a + 1.0) * std::pow(u, 1.0 / a);
    }
    double d = a - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform01_open_low();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  std::vector<double> normal_vec(size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = normal();
    return out;
  }

 private:
  uint64_t state_;
};

inline double sample_uniform_interval(double lo, double hi, Rng& rng) {
  if (lo > hi) throw ContractError("sample_uniform_interval: lo > hi");
  if (lo == hi) return lo;
  return rng.uniform(lo, hi);
}

namespace detail {

inline double vec_norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Random unit vector orthogonal to mu (tangent direction for the
// tangent-normal decomposition).
inline std::vector<double> tangent_unit(const std::vector<double>& mu, Rng& rng) {
  const size_t d = mu.size();
  for (;;) {
    std::vector<double> v = rng.normal_vec(d);
    double dot = 0;
    for (size_t i = 0; i < d; ++i) dot += v[i] * mu[i];
    for (size_t i = 0; i < d; ++i) v[i] -= dot * mu[i];
    double n = vec_norm(v);
    if (n > 1e-12) {
      for (auto& x : v) x /= n;
      return v;
    }
  }
}

}  // namespace detail

// von Mises-Fisher sample on the unit sphere in dimension >= 2, via Wood's
// rejection envelope for the cosine W plus a uniform tangent direction.
// Exact for every kappa; kappa = 0 degrades to uniform on the sphere.
inline std::vector<double> sample_vmf(const std::vector<double>& mu, double kappa, Rng& rng) {
  const size_t d = mu.size();
  if (d < 2) throw ContractError("sample_vmf: dimension must be >= 2");
  if (kappa < 0) throw ContractError("sample_vmf: kappa must be >= 0");
  double mu_norm = detail::vec_norm(mu);
  if (mu_norm < 1e-12) throw ContractError("sample_vmf: direction is the zero vector");
  if (std::fabs(mu_norm - 1.0) > 1e-6) throw ContractError("sample_vmf: mu is not a unit vector");

  std::vector<double> x(d);
  if (kappa == 0.0) {
    for (;;) {
      x = rng.normal_vec(d);
      double n = detail::vec_norm(x);
      if (n > 1e-12) {
        for (auto& v : x) v /= n;
        return x;
      }
    }
  }

  const double dm1 = static_cast<double>(d) - 1.0;
  // Rationalized form of Wood's b, stable for large kappa.
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);

  double w = 0;
  for (;;) {
    double z = rng.beta(0.5 * dm1, 0.5 * dm1);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    double u = rng.uniform01_open_low();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }

  std::vector<double> t = detail::tangent_unit(mu, rng);
  double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  for (size_t i = 0; i < d; ++i) x[i] = w * mu[i] + s * t[i];
  double n = detail::vec_norm(x);
  for (auto& v : x) v /= n;
  return x;
}

}  // namespace emogen
