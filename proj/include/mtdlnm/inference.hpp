#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mtdlnm/mcmc.hpp"

namespace mtdlnm {

// ---------------------------------------------------------------------------
// Surface summaries
// ---------------------------------------------------------------------------

struct SurfaceSummary {
  std::vector<double> grid_x;
  std::vector<int> grid_l;
  Eigen::MatrixXd mean;   // |grid_x| x |grid_l|
  Eigen::MatrixXd lower;  // (1-level)/2 quantile, minus widen
  Eigen::MatrixXd upper;  // 1-(1-level)/2 quantile, plus widen
  double level = 0.95;
  double widen = 0.0;
};

// Empirical quantile, type-7 convention: linear interpolation of the order
// statistics at h = (n-1)p. `sorted` must be ascending.
inline double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile_type7: no values");
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("quantile_type7: p outside [0, 1]");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = (n - 1) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  double frac = h - lo;
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Pointwise posterior mean and central credible band over retained draws.
// `widen` adds a fixed margin on each side; `percent_change` maps every draw
// through 100*(exp(w)-1) first (log-link effects reported as percentages).
// Bounds are nudged to contain the mean so the summary invariant
// lower <= mean <= upper holds even for extremely skewed draws.
inline SurfaceSummary summarize_surface(const std::vector<PosteriorDraw>& draws,
                                        const std::vector<double>& grid_x,
                                        const std::vector<int>& grid_l,
                                        double level = 0.95, double widen = 0.0,
                                        bool percent_change = false) {
  if (draws.size() < 2)
    throw std::invalid_argument("summarize_surface: need at least 2 draws");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("summarize_surface: level outside (0, 1)");
  if (!(widen >= 0.0))
    throw std::invalid_argument("summarize_surface: negative widening");
  const Eigen::Index rows = draws.front().surface.rows();
  const Eigen::Index cols = draws.front().surface.cols();
  if (rows != static_cast<Eigen::Index>(grid_x.size()) ||
      cols != static_cast<Eigen::Index>(grid_l.size()))
    throw std::invalid_argument("summarize_surface: grid/surface shape mismatch");
  for (const PosteriorDraw& d : draws)
    if (d.surface.rows() != rows || d.surface.cols() != cols)
      throw std::invalid_argument("summarize_surface: draw shape mismatch");

  SurfaceSummary out;
  out.grid_x = grid_x;
  out.grid_l = grid_l;
  out.level = level;
  out.widen = widen;
  out.mean.resize(rows, cols);
  out.lower.resize(rows, cols);
  out.upper.resize(rows, cols);

  const double p_lo = 0.5 * (1.0 - level);
  const double p_hi = 1.0 - p_lo;
  std::vector<double> vals(draws.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < draws.size(); ++r) {
        double w = draws[r].surface(i, j);
        if (percent_change) w = 100.0 * std::expm1(w);
        vals[r] = w;
        acc += w;
      }
      double m = acc / draws.size();
      std::sort(vals.begin(), vals.end());
      double lo = std::min(quantile_type7(vals, p_lo), m);
      double hi = std::max(quantile_type7(vals, p_hi), m);
      out.mean(i, j) = m;
      out.lower(i, j) = lo - widen;
      out.upper(i, j) = hi + widen;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Susceptibility
// ---------------------------------------------------------------------------

struct SusceptibilityProfile {
  Eigen::VectorXd probability;  // length L+1
  double threshold = 0.95;
};

// Per-lag posterior probability that some nested tree covering the lag has a
// genuine exposure split in that draw.
inline SusceptibilityProfile susceptibility(
    const std::vector<PosteriorDraw>& draws, double threshold = 0.95) {
  if (draws.empty())
    throw std::invalid_argument("susceptibility: no draws");
  const std::size_t dim = draws.front().effect_lags.size();
  SusceptibilityProfile out;
  out.threshold = threshold;
  out.probability = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const PosteriorDraw& d : draws) {
    if (d.effect_lags.size() != dim)
      throw std::invalid_argument("susceptibility: indicator length mismatch");
    for (std::size_t l = 0; l < dim; ++l)
      out.probability[static_cast<Eigen::Index>(l)] += d.effect_lags[l];
  }
  out.probability /= static_cast<double>(draws.size());
  return out;
}

// Lags whose susceptibility probability clears the decision threshold.
inline std::vector<int> declared_lags(const SusceptibilityProfile& profile) {
  std::vector<int> out;
  for (Eigen::Index l = 0; l < profile.probability.size(); ++l)
    if (profile.probability[l] >= profile.threshold)
      out.push_back(static_cast<int>(l));
  return out;
}

// ---------------------------------------------------------------------------
// Convergence diagnostics
// ---------------------------------------------------------------------------

struct ConvergenceSummary {
  Eigen::MatrixXd rhat;  // per grid point
  double median_rhat = 1.0;
};

// Classic potential scale reduction factor for one scalar tracked across
// chains: sqrt(((n-1)/n W + B/n) / W) with n the retained length per chain.
// Identical chains give sqrt((n-1)/n); degenerate (zero-variance) chains give
// 1 when they agree and +inf when they do not.
inline double psrf_scalar(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw std::invalid_argument("psrf: need at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n)
      throw std::invalid_argument("psrf: chains of unequal length");
  if (n < 2) throw std::invalid_argument("psrf: chains too short");

  double grand = 0.0;
  std::vector<double> mu(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (double x : chains[j]) mu[j] += x;
    mu[j] /= n;
    grand += mu[j];
  }
  grand /= m;

  double w = 0.0, b = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double s2 = 0.0;
    for (double x : chains[j]) s2 += (x - mu[j]) * (x - mu[j]);
    w += s2 / (n - 1);
    b += (mu[j] - grand) * (mu[j] - grand);
  }
  w /= m;
  b *= static_cast<double>(n) / (m - 1);

  if (w <= 1e-300)
    return b <= 1e-300 ? 1.0 : std::numeric_limits<double>::infinity();
  double v_hat = (static_cast<double>(n) - 1.0) / n * w + b / n;
  return std::sqrt(v_hat / w);
}

// Gelman-Rubin diagnostic per surface grid point plus its median over the
// grid. Expects >= 2 chains of equal retained length >= 10.
inline ConvergenceSummary gelman_rubin(
    const std::vector<std::vector<Eigen::MatrixXd>>& chains) {
  if (chains.size() < 2)
    throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n)
      throw std::invalid_argument("gelman_rubin: chains of unequal length");
  if (n < 10)
    throw std::invalid_argument("gelman_rubin: need >= 10 retained draws");
  const Eigen::Index rows = chains.front().front().rows();
  const Eigen::Index cols = chains.front().front().cols();
  for (const auto& c : chains)
    for (const auto& s : c)
      if (s.rows() != rows || s.cols() != cols)
        throw std::invalid_argument("gelman_rubin: surface shape mismatch");

  ConvergenceSummary out;
  out.rhat.resize(rows, cols);
  std::vector<std::vector<double>> scalar(chains.size(),
                                          std::vector<double>(n));
  std::vector<double> all;
  all.reserve(static_cast<std::size_t>(rows * cols));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (std::size_t cidx = 0; cidx < chains.size(); ++cidx)
        for (std::size_t r = 0; r < n; ++r)
          scalar[cidx][r] = chains[cidx][r](i, j);
      double v = psrf_scalar(scalar);
      out.rhat(i, j) = v;
      all.push_back(v);
    }
  }
  std::sort(all.begin(), all.end());
  const std::size_t k = all.size();
  out.median_rhat =
      (k % 2 == 1) ? all[k / 2] : 0.5 * (all[k / 2 - 1] + all[k / 2]);
  return out;
}

}  // namespace mtdlnm
