#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mtdlnm {

// Aligned outcome / lagged-exposure / covariate rows. Row t of `exposures`
// holds (x_t, x_{t-1}, ..., x_{t-L}); rows whose lag window touched a missing
// value were dropped at construction.
struct LaggedDataset {
  Eigen::VectorXd outcomes;
  Eigen::MatrixXd exposures;   // n x (L+1), column l = x_{t-l}
  Eigen::MatrixXd covariates;  // n x p, includes intercept
  int lag_count = 0;
  std::optional<Eigen::VectorXd> trial_counts;  // binomial only
  int dropped_rows = 0;

  int n() const { return static_cast<int>(outcomes.size()); }

  // Pooled standard deviation of all exposure entries; the default smoothing
  // bandwidth is half of this.
  double exposure_sd() const {
    double m = exposures.mean();
    double ss = (exposures.array() - m).square().sum();
    double denom = static_cast<double>(exposures.size()) - 1.0;
    return std::sqrt(ss / denom);
  }
};

// Assemble a LaggedDataset from a raw exposure series. Series are aligned by
// position; rows with an incomplete lag window (head of the series or any NaN
// in the window, outcome, covariates, or trial count) are excluded. `trials`
// is optional (binomial outcomes only) and must align with the series.
inline LaggedDataset build_lagged_design(const std::vector<double>& exposure_series,
                                         const std::vector<double>& outcomes,
                                         const Eigen::MatrixXd& covariates,
                                         int L,
                                         const std::vector<double>& trials = {}) {
  if (L < 0) throw std::invalid_argument("build_lagged_design: L < 0");
  const std::size_t n_raw = exposure_series.size();
  if (outcomes.size() != n_raw ||
      static_cast<std::size_t>(covariates.rows()) != n_raw ||
      (!trials.empty() && trials.size() != n_raw))
    throw std::invalid_argument(
        "build_lagged_design: series lengths are misaligned");

  std::vector<int> keep;
  keep.reserve(n_raw);
  int dropped = 0;
  for (std::size_t t = 0; t < n_raw; ++t) {
    if (t < static_cast<std::size_t>(L)) continue;  // incomplete history
    bool ok = std::isfinite(outcomes[t]);
    for (int l = 0; ok && l <= L; ++l)
      ok = std::isfinite(exposure_series[t - l]);
    for (int j = 0; ok && j < covariates.cols(); ++j)
      ok = std::isfinite(covariates(t, j));
    if (ok && !trials.empty()) ok = std::isfinite(trials[t]);
    if (ok)
      keep.push_back(static_cast<int>(t));
    else
      ++dropped;
  }
  if (keep.empty())
    throw std::runtime_error("build_lagged_design: no complete rows");

  LaggedDataset d;
  d.lag_count = L;
  d.dropped_rows = dropped;
  const int n = static_cast<int>(keep.size());
  d.outcomes.resize(n);
  d.exposures.resize(n, L + 1);
  d.covariates.resize(n, covariates.cols());
  if (!trials.empty()) d.trial_counts.emplace(n);
  for (int i = 0; i < n; ++i) {
    int t = keep[i];
    d.outcomes[i] = outcomes[t];
    for (int l = 0; l <= L; ++l) d.exposures(i, l) = exposure_series[t - l];
    d.covariates.row(i) = covariates.row(t);
    if (!trials.empty()) (*d.trial_counts)[i] = trials[t];
  }
  return d;
}

}  // namespace mtdlnm
