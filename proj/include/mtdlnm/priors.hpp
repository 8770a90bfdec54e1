#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mtdlnm/math.hpp"
#include "mtdlnm/rng.hpp"
#include "mtdlnm/trees.hpp"

namespace mtdlnm {

// Shared Dirichlet prior over the L between-lag split locations used by every
// time tree in the ensemble. probs is the current location distribution,
// weights its Dirichlet base measure, kappa the concentration; kappa/(kappa+L)
// carries a uniform hyperprior unless kappa_fixed.
struct SplitLocationPrior {
  std::vector<double> probs;    // simplex, length L (0 when L == 0)
  std::vector<double> weights;  // simplex, length L
  double kappa = 1.0;
  bool kappa_fixed = false;

  void validate() const {
    if (probs.size() != weights.size())
      throw std::invalid_argument("SplitLocationPrior: length mismatch");
    auto check_simplex = [](const std::vector<double>& v, const char* what) {
      if (v.empty()) return;
      double s = 0.0;
      for (double x : v) {
        if (!(x >= 0.0))
          throw std::invalid_argument(std::string("SplitLocationPrior: negative ") + what);
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-12)
        throw std::invalid_argument(std::string("SplitLocationPrior: ") + what +
                                    " does not sum to 1");
    };
    check_simplex(probs, "probs");
    check_simplex(weights, "weights");
    if (!(kappa > 0.0))
      throw std::invalid_argument("SplitLocationPrior: kappa must be positive");
  }
};

inline SplitLocationPrior uniform_split_location_prior(int max_lag) {
  if (max_lag < 0)
    throw std::invalid_argument("uniform_split_location_prior: max_lag < 0");
  SplitLocationPrior p;
  if (max_lag > 0) {
    p.probs.assign(max_lag, 1.0 / max_lag);
    p.weights.assign(max_lag, 1.0 / max_lag);
    p.kappa = max_lag;  // kappa/(kappa+L) = 1/2, the hyperprior median
  }
  return p;
}

// Normal prior on the per-lag selection coefficients, diagonal covariance.
struct SelectionPrior {
  Eigen::VectorXd mean;      // length L+1
  Eigen::VectorXd variance;  // diagonal of the covariance, length L+1

  void validate() const {
    if (mean.size() == 0 || mean.size() != variance.size())
      throw std::invalid_argument("SelectionPrior: length mismatch");
    for (int i = 0; i < variance.size(); ++i)
      if (!(variance[i] > 0.0))
        throw std::invalid_argument("SelectionPrior: nonpositive variance");
  }
};

// Probability that a node at the given depth splits: alpha * (1+depth)^-beta.
inline double split_prob_standard(int depth, double alpha, double beta) {
  if (depth < 0) throw std::invalid_argument("split_prob_standard: depth < 0");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("split_prob_standard: alpha outside [0,1]");
  if (!(beta >= 0.0)) throw std::invalid_argument("split_prob_standard: beta < 0");
  return alpha * std::pow(1.0 + depth, -beta);
}

// Zero-inflated split probability for a nested exposure tree whose owning lag
// interval is [lag_lo, lag_hi]: the root splits with probability
// logistic(mean of gamma over the interval); deeper nodes use the standard
// rule.
inline double split_prob_zero_inflated(int depth, int lag_lo, int lag_hi,
                                       const Eigen::VectorXd& gamma,
                                       double alpha_e, double beta_e) {
  if (lag_lo < 0 || lag_lo > lag_hi || lag_hi >= gamma.size())
    throw std::invalid_argument("split_prob_zero_inflated: bad lag interval");
  if (depth >= 1) return split_prob_standard(depth, alpha_e, beta_e);
  if (depth < 0) throw std::invalid_argument("split_prob_zero_inflated: depth < 0");
  double s = 0.0;
  for (int l = lag_lo; l <= lag_hi; ++l) s += gamma[l];
  return logistic(s / (lag_hi - lag_lo + 1));
}

// Grid values usable as a split inside a node's exposure interval. A value on
// either boundary would create an empty child, so the comparison is strict.
inline std::vector<double> valid_exposure_splits(double lower, double upper,
                                                 const std::vector<double>& grid) {
  std::vector<double> out;
  for (double v : grid)
    if (v > lower && v < upper) out.push_back(v);
  return out;
}

// Draws a nested exposure tree from its zero-inflated prior: the root splits
// with the gamma-driven probability, deeper nodes with the standard rule, and
// split values are uniform over the grid values still valid at the node. A
// node with no valid values left is forced terminal, which guarantees
// termination.
inline ExposureTree draw_exposure_tree_from_prior(
    int lag_lo, int lag_hi, const Eigen::VectorXd& gamma,
    const std::vector<double>& split_grid, double alpha_e, double beta_e,
    RngStream& rng) {
  if (split_grid.empty())
    throw std::invalid_argument("draw_exposure_tree_from_prior: empty grid");
  ExposureTree tree;
  auto recurse = [&](auto&& self, int idx) -> void {
    double lower = tree.nodes()[idx].lower;
    double upper = tree.nodes()[idx].upper;
    int depth = tree.nodes()[idx].depth;
    std::vector<double> valid = valid_exposure_splits(lower, upper, split_grid);
    if (valid.empty()) return;
    double p = depth == 0 ? split_prob_zero_inflated(0, lag_lo, lag_hi, gamma,
                                                     alpha_e, beta_e)
                          : split_prob_standard(depth, alpha_e, beta_e);
    if (rng.uniform() >= p) return;
    double value = valid[static_cast<std::size_t>(rng.uniform_index(valid.size()))];
    auto [li, ri] = tree.split_node(idx, value);
    self(self, li);
    self(self, ri);
  };
  recurse(recurse, 0);
  return tree;
}

// Log prior mass of an exposure tree under the same generative process:
// sum over internal nodes of log p_split + log(1/#valid) plus sum over
// terminal nodes of log(1 - p_split), where exhausted nodes have p_split 0.
inline double log_exposure_tree_prior(const ExposureTree& tree, int lag_lo,
                                      int lag_hi, const Eigen::VectorXd& gamma,
                                      const std::vector<double>& split_grid,
                                      double alpha_e, double beta_e) {
  if (split_grid.empty())
    throw std::invalid_argument("log_exposure_tree_prior: empty grid");
  double lp = 0.0;
  for (const ExposureNode& nd : tree.nodes()) {
    std::vector<double> valid =
        valid_exposure_splits(nd.lower, nd.upper, split_grid);
    double p = valid.empty()
                   ? 0.0
                   : (nd.depth == 0 ? split_prob_zero_inflated(
                                          0, lag_lo, lag_hi, gamma, alpha_e, beta_e)
                                    : split_prob_standard(nd.depth, alpha_e, beta_e));
    if (nd.is_terminal()) {
      lp += std::log1p(-p);
    } else {
      if (std::find(valid.begin(), valid.end(), nd.split) == valid.end())
        throw std::logic_error("log_exposure_tree_prior: split not on the grid");
      lp += std::log(p) - std::log(static_cast<double>(valid.size()));
    }
  }
  return lp;
}

// Draws a split location s in [lag_lo, lag_hi-1] with probability
// proportional to probs[s].
inline int draw_time_split(int lag_lo, int lag_hi,
                           const std::vector<double>& probs, RngStream& rng) {
  if (lag_lo >= lag_hi) throw std::invalid_argument("draw_time_split: no room");
  if (lag_hi > static_cast<int>(probs.size()))
    throw std::invalid_argument("draw_time_split: probs too short");
  double total = 0.0;
  for (int s = lag_lo; s < lag_hi; ++s) total += probs[s];
  if (!(total > 0.0)) throw std::runtime_error("draw_time_split: zero mass");
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (int s = lag_lo; s < lag_hi; ++s) {
    acc += probs[s];
    if (u < acc) return s;
  }
  return lag_hi - 1;
}

// Draws a time-tree structure (no data, default nested trees) from the prior:
// standard split probabilities, split locations from the shared location
// distribution restricted to the node's interval. Single-lag nodes are forced
// terminal.
inline TimeTree draw_time_tree_from_prior(int max_lag,
                                          const SplitLocationPrior& loc,
                                          double alpha_t, double beta_t,
                                          RngStream& rng) {
  if (static_cast<int>(loc.probs.size()) < max_lag)
    throw std::invalid_argument("draw_time_tree_from_prior: probs too short");
  TimeTree tree(max_lag);
  auto recurse = [&](auto&& self, int idx) -> void {
    int lo = tree.node(idx).lag_lo;
    int hi = tree.node(idx).lag_hi;
    int depth = tree.node(idx).depth;
    if (lo >= hi) return;
    if (rng.uniform() >= split_prob_standard(depth, alpha_t, beta_t)) return;
    int s = draw_time_split(lo, hi, loc.probs, rng);
    auto [li, ri] = tree.grow(idx, s);
    self(self, li);
    self(self, ri);
  };
  recurse(recurse, 0);
  return tree;
}

// Log prior mass of a time-tree structure. Rule probabilities are the shared
// location weights renormalized over the node's interval; single-lag nodes
// have split probability 0 (factor 1).
inline double log_time_tree_prior(const TimeTree& tree,
                                  const SplitLocationPrior& loc,
                                  double alpha_t, double beta_t) {
  if (static_cast<int>(loc.probs.size()) < tree.max_lag())
    throw std::invalid_argument("log_time_tree_prior: probs too short");
  double lp = 0.0;
  for (const TimeNode& nd : tree.nodes()) {
    bool splittable = nd.lag_lo < nd.lag_hi;
    double p = splittable ? split_prob_standard(nd.depth, alpha_t, beta_t) : 0.0;
    if (nd.is_terminal()) {
      lp += std::log1p(-p);
    } else {
      double total = 0.0;
      for (int s = nd.lag_lo; s < nd.lag_hi; ++s) total += loc.probs[s];
      if (!(total > 0.0) || !(loc.probs[nd.split] > 0.0))
        throw std::runtime_error("log_time_tree_prior: zero-mass split");
      lp += std::log(p) + std::log(loc.probs[nd.split] / total);
    }
  }
  return lp;
}

// Number of internal time-tree splits at each location across the ensemble.
inline std::vector<double> tally_split_locations(
    const std::vector<NestedTreeUnit>& units, int max_lag) {
  std::vector<double> counts(std::max(max_lag, 0), 0.0);
  for (const auto& u : units)
    for (int idx : u.time_tree.internal_indices())
      counts[u.time_tree.node(idx).split] += 1.0;
  return counts;
}

// Gibbs step for the location distribution plus a Metropolis step for kappa
// on the kappa/(kappa+L) scale (uniform hyperprior there, uniform independence
// proposal, so the ratio is the Dirichlet density ratio).
inline SplitLocationPrior update_split_location_prior(
    const std::vector<double>& split_counts, const SplitLocationPrior& prior,
    RngStream& rng) {
  prior.validate();
  const std::size_t L = prior.weights.size();
  if (split_counts.size() != L)
    throw std::invalid_argument("update_split_location_prior: count length");
  SplitLocationPrior out = prior;
  if (L == 0) return out;
  std::vector<double> alpha(L);
  for (std::size_t i = 0; i < L; ++i) {
    if (!(split_counts[i] >= 0.0))
      throw std::invalid_argument("update_split_location_prior: negative count");
    alpha[i] = prior.weights[i] * prior.kappa + split_counts[i];
  }
  out.probs = rng.dirichlet(alpha);
  if (!prior.kappa_fixed) {
    auto log_dirichlet = [&](double kappa) {
      double lg = std::lgamma(kappa);
      for (std::size_t i = 0; i < L; ++i) {
        lg -= std::lgamma(prior.weights[i] * kappa);
        lg += (prior.weights[i] * kappa - 1.0) * std::log(out.probs[i]);
      }
      return lg;
    };
    double Ld = static_cast<double>(L);
    double phi_new = rng.uniform_open();
    double kappa_new = Ld * phi_new / (1.0 - phi_new);
    double log_ratio = log_dirichlet(kappa_new) - log_dirichlet(out.kappa);
    if (std::log(rng.uniform_open()) < log_ratio) out.kappa = kappa_new;
  }
  return out;
}

// Mean and variance of a normal on the logit scale whose 2.5% and 97.5%
// quantiles map through the logistic function to (low, high).
inline std::pair<double, double> selection_prior_from_interval(double low,
                                                               double high) {
  if (!(low > 0.0 && high < 1.0 && low < high))
    throw std::invalid_argument(
        "selection_prior_from_interval: need 0 < low < high < 1");
  double a = logit(low);
  double b = logit(high);
  double mean = 0.5 * (a + b);
  double sd = (b - a) / (2.0 * 1.96);
  return {mean, sd * sd};
}

inline SelectionPrior selection_prior_broadcast(int max_lag, double mean,
                                                double variance) {
  if (max_lag < 0) throw std::invalid_argument("selection_prior_broadcast: max_lag");
  SelectionPrior p;
  p.mean = Eigen::VectorXd::Constant(max_lag + 1, mean);
  p.variance = Eigen::VectorXd::Constant(max_lag + 1, variance);
  p.validate();
  return p;
}

}  // namespace mtdlnm
