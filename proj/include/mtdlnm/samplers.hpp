#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "mtdlnm/math.hpp"
#include "mtdlnm/rng.hpp"

namespace mtdlnm {

// One draw from MVN(mean, cov) restricted to the nonnegative orthant, by
// coordinate-wise Gibbs over univariate truncated-normal full conditionals.
// Starts at the positive part of the mean; `sweeps` full passes.
inline Eigen::VectorXd sample_tmvn_nonneg(const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& cov,
                                          RngStream& rng, int sweeps = 10) {
  const int q = static_cast<int>(mean.size());
  if (q == 0) return Eigen::VectorXd();
  if (cov.rows() != q || cov.cols() != q)
    throw std::invalid_argument("sample_tmvn_nonneg: dimension mismatch");

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_tmvn_nonneg: covariance not SPD");
  Eigen::MatrixXd prec =
      llt.solve(Eigen::MatrixXd::Identity(q, q));  // precision matrix

  Eigen::VectorXd x = mean.cwiseMax(0.0);
  for (int s = 0; s < sweeps; ++s) {
    for (int j = 0; j < q; ++j) {
      double pj = prec(j, j);
      // conditional mean: mean_j - (1/prec_jj) * sum_{k != j} prec_jk (x_k - mean_k)
      double dot = prec.row(j).dot(x - mean) - pj * (x[j] - mean[j]);
      double cm = mean[j] - dot / pj;
      double sd = 1.0 / std::sqrt(pj);
      double a = -cm / sd;
      x[j] = cm + sd * rng.truncnorm_lower(a);
    }
  }
  return x;
}

// log P(X >= 0 elementwise), X ~ MVN(mean, cov), by GHK sequential
// conditioning with antithetic pairs. Deterministic given the stream state;
// callers sharing common random numbers across two calls should pass clones
// of the same stream.
inline double log_orthant_prob(const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& cov, int mc_size,
                               RngStream& rng) {
  const int q = static_cast<int>(mean.size());
  if (q == 0) return 0.0;
  if (mc_size < 1) throw std::invalid_argument("log_orthant_prob: mc_size < 1");

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("log_orthant_prob: covariance not SPD");
  Eigen::MatrixXd L = llt.matrixL();
  for (int j = 0; j < q; ++j)
    if (!(L(j, j) > 0.0))
      throw std::runtime_error("log_orthant_prob: degenerate covariance");

  if (q == 1) return log_norm_cdf(mean[0] / L(0, 0));

  const int pairs = (mc_size + 1) / 2;
  std::vector<double> logw;
  logw.reserve(2 * pairs);
  Eigen::VectorXd z(q);
  Eigen::MatrixXd u(pairs, q - 1);
  for (int m = 0; m < pairs; ++m)
    for (int j = 0; j < q - 1; ++j) u(m, j) = rng.uniform_open();

  for (int m = 0; m < pairs; ++m) {
    for (int half = 0; half < 2; ++half) {
      double lw = 0.0;
      for (int j = 0; j < q; ++j) {
        double shift = mean[j];
        for (int k = 0; k < j; ++k) shift += L(j, k) * z[k];
        double a = -shift / L(j, j);
        double lsf = log_norm_sf(a);
        lw += lsf;
        if (j < q - 1) {
          // Tail-stable inverse-CDF draw of N(0,1) given Z >= a: the survival
          // value t = u * SF(a) stays accurate however far out a sits.
          double uj = (half == 0) ? u(m, j) : 1.0 - u(m, j);
          double t = std::exp(lsf) * uj;
          z[j] = (t > 0.0) ? -norm_quantile(t) : a;
        }
      }
      logw.push_back(lw);
    }
  }
  return log_sum_exp(logw) - std::log(static_cast<double>(logw.size()));
}

namespace detail {

inline constexpr double pg_trunc = 0.64;

// Alternating-series coefficients of the Jacobi density (two theta-function
// representations, switched at the truncation point).
inline double pg_coef(int n, double x) {
  double K = (n + 0.5) * pi;
  if (x > pg_trunc) return K * std::exp(-0.5 * K * K * x);
  if (x > 0.0) {
    double expnt = -1.5 * (std::log(0.5 * pi) + std::log(x)) + std::log(K) -
                   2.0 * (n + 0.5) * (n + 0.5) / x;
    return std::exp(expnt);
  }
  return 0.0;
}

// Probability that the proposal comes from the exponential (right) piece.
inline double pg_mass_right(double Z) {
  double t = pg_trunc;
  double fz = 0.125 * pi * pi + 0.5 * Z * Z;
  double b = std::sqrt(1.0 / t) * (t * Z - 1.0);
  double a = -std::sqrt(1.0 / t) * (t * Z + 1.0);
  double x0 = std::log(fz) + fz * t;
  double xb = x0 - Z + log_norm_cdf(b);
  double xa = x0 + Z + log_norm_cdf(a);
  double qdivp = 4.0 / pi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + qdivp);
}

// Inverse-Gaussian(1/Z, 1) truncated to (0, pg_trunc).
inline double pg_rtigauss(double Z, RngStream& rng) {
  Z = std::fabs(Z);
  double t = pg_trunc;
  double X = t + 1.0;
  if (1.0 / t > Z) {
    for (;;) {
      double E1 = rng.exponential(), E2 = rng.exponential();
      while (E1 * E1 > 2.0 * E2 / t) {
        E1 = rng.exponential();
        E2 = rng.exponential();
      }
      X = t / ((1.0 + t * E1) * (1.0 + t * E1));
      if (rng.uniform() <= std::exp(-0.5 * Z * Z * X)) return X;
    }
  }
  double mu = 1.0 / Z;
  while (X > t) {
    double Y = rng.normal();
    Y = Y * Y;
    double mu_Y = mu * Y;
    X = mu + 0.5 * mu * mu_Y - 0.5 * mu * std::sqrt(4.0 * mu_Y + mu_Y * mu_Y);
    if (rng.uniform() > mu / (mu + X)) X = mu * mu / X;
  }
  return X;
}

// Exact PG(1, z) draw (Devroye-type rejection on the Jacobi series).
inline double pg_draw_1(double z, RngStream& rng) {
  double Z = std::fabs(z) * 0.5;
  double fz = 0.125 * pi * pi + 0.5 * Z * Z;
  for (;;) {
    double X;
    if (rng.uniform() < pg_mass_right(Z))
      X = pg_trunc + rng.exponential() / fz;
    else
      X = pg_rtigauss(Z, rng);
    double S = pg_coef(0, X);
    double Y = rng.uniform() * S;
    bool accept = false;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        S -= pg_coef(n, X);
        if (Y <= S) {
          accept = true;
          break;
        }
      } else {
        S += pg_coef(n, X);
        if (Y > S) break;
      }
    }
    if (accept) return 0.25 * X;
  }
}

}  // namespace detail

inline double polya_gamma_mean(double b, double z) {
  double az = std::fabs(z);
  if (az < 1e-3) return 0.25 * b;
  return 0.5 * b * std::tanh(0.5 * az) / az;
}

inline double polya_gamma_var(double b, double z) {
  double az = std::fabs(z);
  if (az < 1e-3) return b / 24.0;
  double ch = std::cosh(0.5 * az);
  return b * (std::sinh(az) - az) / (4.0 * az * az * az * ch * ch);
}

// Draw from PG(b, z). Integer b up to 50 uses the exact sum of PG(1, z)
// draws; larger (or non-integer) b uses a moment-matched Gaussian, which is
// effectively exact at the daily counts that need it.
inline double sample_polya_gamma(double b, double z, RngStream& rng) {
  if (!(b > 0.0)) throw std::invalid_argument("sample_polya_gamma: b <= 0");
  double bi = std::round(b);
  bool is_int = std::fabs(b - bi) < 1e-9;
  if (is_int && bi <= 50.0) {
    double s = 0.0;
    for (int i = 0; i < static_cast<int>(bi); ++i)
      s += detail::pg_draw_1(z, rng);
    return s;
  }
  double m = polya_gamma_mean(b, z);
  double sd = std::sqrt(polya_gamma_var(b, z));
  double x = m + sd * rng.normal();
  return (x > 1e-12) ? x : 1e-12;
}

// Makalic-Schmidt auxiliary Gibbs pair for a half-Cauchy(0,1) scale prior:
//   variance | aux ~ InvGamma((count+1)/2, 1/aux + sum_sq/2)
//   aux | variance ~ InvGamma(1, 1 + 1/variance)
// With count = 0 and sum_sq = 0 the stationary law of sqrt(variance) is
// half-Cauchy(0,1).
inline std::pair<double, double> update_halfcauchy_variance(double sum_sq,
                                                            int count,
                                                            double aux,
                                                            RngStream& rng) {
  if (count < 0) throw std::invalid_argument("update_halfcauchy_variance: count < 0");
  if (!(sum_sq >= 0.0))
    throw std::invalid_argument("update_halfcauchy_variance: sum_sq < 0");
  double variance =
      rng.inverse_gamma(0.5 * (count + 1.0), 1.0 / aux + 0.5 * sum_sq);
  double new_aux = rng.inverse_gamma(1.0, 1.0 + 1.0 / variance);
  return {variance, new_aux};
}

}  // namespace mtdlnm
