#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "mtdlnm/math.hpp"

namespace mtdlnm {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic random stream. (seed, stream) fully determines the sequence;
// distinct stream ids give well-separated generators for parallel chains.
// Copying a stream clones its state, which is how common random numbers are
// shared between two estimates of the same quantity.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t x = seed;
    std::uint64_t a = detail::splitmix64(x);
    x ^= (stream + 1) * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = detail::splitmix64(x);
    gen_.seed(a ^ (b << 1));
  }

  std::uint64_t next_u64() { return gen_(); }

  // U[0,1), 53-bit resolution.
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  // Strictly interior U(0,1); safe to pass through logs and quantiles.
  double uniform_open() { return ((gen_() >> 12) + 0.5) * 0x1.0p-52; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
    // Rejection to avoid modulo bias; at most a few retries.
    std::uint64_t lim = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = gen_();
    } while (r >= lim);
    return r % n;
  }

  double normal() { return norm_quantile(uniform_open()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform_open()); }

  // Marsaglia-Tsang squeeze; shape < 1 handled by the boosting identity.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape <= 0");
    if (shape < 1.0) {
      double u = uniform_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double gamma(double shape, double rate) { return gamma(shape) / rate; }

  double inverse_gamma(double shape, double scale) {
    return scale / gamma(shape);
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    std::vector<double> g(alpha.size());
    double s = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      g[i] = gamma(alpha[i]);
      if (g[i] < 1e-300) g[i] = 1e-300;
      s += g[i];
    }
    for (double& x : g) x /= s;
    return g;
  }

  // Standard normal truncated to [a, inf). Plain rejection near the bulk,
  // Robert's translated-exponential rejection in the tail.
  double truncnorm_lower(double a) {
    if (a < 0.45) {
      for (;;) {
        double z = normal();
        if (z >= a) return z;
      }
    }
    const double lam = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
      double z = a + exponential() / lam;
      double diff = z - lam;
      if (std::log(uniform_open()) <= -0.5 * diff * diff) return z;
    }
  }

  // Derive a fresh, reproducible child stream; consumes one draw.
  RngStream spawn() { return RngStream(next_u64(), 0x5eedfeedULL); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mtdlnm
