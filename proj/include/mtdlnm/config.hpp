#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtdlnm/trees.hpp"

namespace mtdlnm {

enum class OutcomeFamily { gaussian, binomial };

// Hyperparameters and global latents carried by a chain.
struct HyperState {
  double sigma = 1.0;  // residual scale (fixed at 1 for binomial)
  double nu = 1.0;     // increment prior scale
  Eigen::VectorXd gamma;        // selection logits, length L+1
  Eigen::VectorXd split_probs;  // time split-location probabilities, length L
  double kappa = 1.0;
  Eigen::VectorXd zeta;  // covariate coefficients
  double aux_sigma = 1.0, aux_nu = 1.0;  // half-Cauchy inverse-gamma latents
  std::optional<Eigen::VectorXd> omega;  // binomial working weights
};

struct Ensemble {
  std::vector<NestedTreeUnit> units;
  HyperState hyper;
};

struct ModelConfig {
  int num_trees = 20;
  double alpha_time = 0.95, beta_time = 2.0;
  double alpha_exposure = 0.95, beta_exposure = 2.0;
  // 0 means "derive from data": half the pooled exposure sd.
  double sigma_x = 0.0;
  // Selection prior; empty mean/var vectors mean "fill from the default
  // interval" at chain setup (one value per lag 0..L).
  Eigen::VectorXd gamma_prior_mean;
  Eigen::VectorXd gamma_prior_var;
  // Dirichlet base weights over split locations 0..L-1; empty = uniform.
  Eigen::VectorXd dirichlet_weights;
  bool learn_kappa = true;
  double fixed_kappa = 0.0;  // used when learn_kappa is false
  double ridge_scale = 1e5;  // c in the N(0, c sigma^2 I) covariate prior
  int iterations = 7000;
  int burn_in = 2000;
  int thinning = 10;
  int chains = 2;
  std::uint64_t seed = 1;
  OutcomeFamily family = OutcomeFamily::gaussian;
  // Frozen lag partitions (one vector of ascending split locations per unit);
  // empty = time trees are sampled.
  std::vector<std::vector<int>> fixed_time_trees;
  // Candidate exposure split values; empty = percentiles 1..99 of the pooled
  // exposure matrix, deduplicated.
  std::vector<double> exposure_split_grid;
  // Surface evaluation grid; empty = the exposure split grid and lags 0..L.
  std::vector<double> surface_grid_x;
  std::vector<int> surface_grid_l;
  // Sampler knobs.
  int tmvn_sweeps = 10;
  int orthant_mc_size = 512;

  void validate() const {
    if (num_trees < 1) throw std::invalid_argument("config: num_trees < 1");
    if (!(burn_in < iterations))
      throw std::invalid_argument("config: burn_in must be < iterations");
    if (thinning < 1) throw std::invalid_argument("config: thinning < 1");
    if (chains < 1) throw std::invalid_argument("config: chains < 1");
    if (ridge_scale <= 0.0) throw std::invalid_argument("config: ridge_scale <= 0");
    if (gamma_prior_var.size() > 0 && gamma_prior_var.minCoeff() <= 0.0)
      throw std::invalid_argument("config: gamma prior variance <= 0");
    if (!learn_kappa && fixed_kappa <= 0.0)
      throw std::invalid_argument("config: fixed kappa <= 0");
    if (tmvn_sweeps < 1 || orthant_mc_size < 2)
      throw std::invalid_argument("config: sampler knobs out of range");
  }
};

}  // namespace mtdlnm
