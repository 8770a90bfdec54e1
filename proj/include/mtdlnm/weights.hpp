#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mtdlnm/config.hpp"
#include "mtdlnm/dataset.hpp"
#include "mtdlnm/math.hpp"
#include "mtdlnm/trees.hpp"

namespace mtdlnm {

// Smooth bin weight: the probability that x + sigma_x * Z lands in
// [lower, upper). Degrades to the indicator as sigma_x -> 0.
inline double psi(double x, double lower, double upper, double sigma_x) {
  if (!(sigma_x > 0.0)) throw std::invalid_argument("psi: sigma_x <= 0");
  double hi = (upper == pos_inf) ? 1.0 : norm_cdf((upper - x) / sigma_x);
  double lo = (lower == neg_inf) ? 0.0 : norm_cdf((lower - x) / sigma_x);
  return hi - lo;
}

// Design matrix of one nested tree unit: column (b, c) holds the smooth count
// of lags in eta_b whose exposure falls in bin c. Bin 0 of every tree is the
// structural zero and gets no column.
struct UnitDesign {
  Eigen::MatrixXd matrix;                     // n x p_a
  std::vector<std::pair<int, int>> columns;   // (nested tree b, bin c >= 1)
};

inline UnitDesign compute_unit_design(const NestedTreeUnit& unit,
                                      const LaggedDataset& data,
                                      double sigma_x) {
  const int n = data.n();
  auto terminals = unit.time_tree.terminal_indices();

  UnitDesign out;
  int p = 0;
  for (int b = 0; b < static_cast<int>(terminals.size()); ++b) {
    int c_count = unit.time_tree.node(terminals[b]).etree.terminal_count();
    for (int c = 1; c < c_count; ++c) out.columns.emplace_back(b, c);
    p += c_count - 1;
  }
  out.matrix.setZero(n, p);

  int col = 0;
  for (int b = 0; b < static_cast<int>(terminals.size()); ++b) {
    const TimeNode& tn = unit.time_tree.node(terminals[b]);
    auto bins = ordered_exposure_bins(tn.etree);
    for (std::size_t c = 1; c < bins.size(); ++c, ++col) {
      for (int t = 0; t < n; ++t) {
        double s = 0.0;
        for (int l = tn.lag_lo; l <= tn.lag_hi; ++l)
          s += psi(data.exposures(t, l), bins[c].lower, bins[c].upper, sigma_x);
        out.matrix(t, col) = s;
      }
    }
  }
  return out;
}

// Exposure-lag-response surface w(x, l) evaluated on a grid; rows follow
// grid_x, columns grid_l.
inline Eigen::MatrixXd evaluate_surface(const Ensemble& ensemble,
                                        const std::vector<double>& grid_x,
                                        const std::vector<int>& grid_l,
                                        double sigma_x) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(grid_x.size(), grid_l.size());
  for (const auto& unit : ensemble.units) {
    for (int idx : unit.time_tree.terminal_indices()) {
      const TimeNode& tn = unit.time_tree.node(idx);
      auto bins = ordered_exposure_bins(tn.etree);
      Eigen::VectorXd delta = tn.etree.delta();
      for (std::size_t i = 0; i < grid_x.size(); ++i) {
        double val = 0.0;
        for (std::size_t c = 0; c < bins.size(); ++c)
          val += delta[c] * psi(grid_x[i], bins[c].lower, bins[c].upper, sigma_x);
        if (val == 0.0) continue;
        for (std::size_t j = 0; j < grid_l.size(); ++j)
          if (grid_l[j] >= tn.lag_lo && grid_l[j] <= tn.lag_hi) w(i, j) += val;
      }
    }
  }
  return w;
}

// Precomputed lag-prefix sums of Phi((v - x_{t-l}) / sigma_x) for every
// candidate split value v. One lookup turns a (bin, lag-interval) design
// column into an O(n) subtraction instead of an O(n L) pass with erfc calls;
// this is what makes tree proposals cheap.
class PhiPrefixCache {
 public:
  PhiPrefixCache() = default;

  PhiPrefixCache(const LaggedDataset& data, const std::vector<double>& grid,
                 double sigma_x)
      : grid_(grid), sigma_x_(sigma_x) {
    const int n = data.n();
    const int lags = data.lag_count + 1;
    prefix_.resize(grid_.size());
    for (std::size_t g = 0; g < grid_.size(); ++g) {
      Eigen::MatrixXd& P = prefix_[g];
      P.resize(n, lags);
      for (int t = 0; t < n; ++t) {
        double acc = 0.0;
        for (int l = 0; l < lags; ++l) {
          acc += norm_cdf((grid_[g] - data.exposures(t, l)) / sigma_x_);
          P(t, l) = acc;
        }
      }
    }
  }

  double sigma_x() const { return sigma_x_; }
  const std::vector<double>& grid() const { return grid_; }

  // Smoothed count of lags in [lag_lo, lag_hi] with exposure above v, i.e.
  // the cumulative design column sum_{c' >= c} u_{t c'} for the bin whose
  // lower bound is v. v must be a grid value.
  Eigen::VectorXd count_above(int lag_lo, int lag_hi, double v) const {
    std::size_t g = index_of(v);
    const Eigen::MatrixXd& P = prefix_[g];
    Eigen::VectorXd below = P.col(lag_hi);
    if (lag_lo > 0) below -= P.col(lag_lo - 1);
    double width = static_cast<double>(lag_hi - lag_lo + 1);
    return (width - below.array()).matrix();
  }

 private:
  std::size_t index_of(double v) const {
    auto it = std::lower_bound(grid_.begin(), grid_.end(), v);
    if (it == grid_.end() || *it != v)
      throw std::logic_error("PhiPrefixCache: value not on the split grid");
    return static_cast<std::size_t>(it - grid_.begin());
  }

  std::vector<double> grid_;
  double sigma_x_ = 1.0;
  std::vector<Eigen::MatrixXd> prefix_;
};

}  // namespace mtdlnm
