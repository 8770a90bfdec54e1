#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "mtdlnm/dataset.hpp"
#include "mtdlnm/rng.hpp"
#include "mtdlnm/trees.hpp"

using Catch::Approx;
using namespace mtdlnm;

namespace {
const double NA = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd ones_col(int n) { return Eigen::MatrixXd::Ones(n, 1); }

// Ad-hoc random time tree for property checks (independent of the model's
// prior machinery on purpose).
TimeTree random_time_tree(int L, RngStream& rng, double p_split = 0.4) {
  TimeTree tree(L);
  for (int pass = 0; pass < 4; ++pass) {
    for (int idx : tree.terminal_indices()) {
      const TimeNode& nd = tree.node(idx);
      if (nd.lag_width() < 2) continue;
      if (rng.uniform() < p_split) {
        int s = nd.lag_lo +
                static_cast<int>(rng.uniform_index(nd.lag_width() - 1));
        tree.grow(idx, s);
      }
    }
  }
  return tree;
}
}  // namespace

TEST_CASE("lagged design with no lags keeps every row", "[core]") {
  auto d = build_lagged_design({1, 2, 3}, {10, 20, 30}, ones_col(3), 0);
  REQUIRE(d.n() == 3);
  REQUIRE(d.exposures.cols() == 1);
  CHECK(d.exposures(0, 0) == 1.0);
  CHECK(d.exposures(2, 0) == 3.0);
  CHECK(d.outcomes[1] == 20.0);
  CHECK(d.dropped_rows == 0);
}

TEST_CASE("lagged design drops the incomplete head", "[core]") {
  std::vector<double> x(10), y(10, 0.0);
  for (int i = 0; i < 10; ++i) x[i] = i + 1;
  auto d = build_lagged_design(x, y, ones_col(10), 2);
  REQUIRE(d.n() == 8);
  // first kept row is t=2 with window (3, 2, 1)
  CHECK(d.exposures(0, 0) == 3.0);
  CHECK(d.exposures(0, 1) == 2.0);
  CHECK(d.exposures(0, 2) == 1.0);
}

TEST_CASE("lagged design drops windows touching a missing value", "[core]") {
  // Series (1, NA, 3, 4, 5), L=2. Enumerating windows by hand:
  //   t=2: (3, NA, 1) -> dropped; t=3: (4, 3, NA) -> dropped;
  //   t=4: (5, 4, 3)  -> kept.
  auto d = build_lagged_design({1, NA, 3, 4, 5}, {0, 0, 0, 0, 0}, ones_col(5), 2);
  REQUIRE(d.n() == 1);
  CHECK(d.exposures(0, 0) == 5.0);
  CHECK(d.exposures(0, 1) == 4.0);
  CHECK(d.exposures(0, 2) == 3.0);
  CHECK(d.dropped_rows == 2);
}

TEST_CASE("lagged design error cases", "[core]") {
  CHECK_THROWS(build_lagged_design({1, 2}, {1, 2, 3}, ones_col(3), 0));
  CHECK_THROWS(build_lagged_design({1, 2}, {1, 2}, ones_col(2), 5));
  CHECK_THROWS(build_lagged_design({NA, NA}, {1, 2}, ones_col(2), 0));
}

TEST_CASE("cumulative-sum map and its validation", "[core]") {
  auto d1 = delta_from_theta({Eigen::VectorXd::Zero(1)});
  CHECK(d1[0][0] == 0.0);

  Eigen::VectorXd th(3);
  th << 0.0, 0.5, 0.2;
  auto d2 = delta_from_theta({th});
  CHECK(d2[0][0] == Approx(0.0));
  CHECK(d2[0][1] == Approx(0.5));
  CHECK(d2[0][2] == Approx(0.7));

  Eigen::VectorXd bad(2);
  bad << 0.0, -0.1;
  CHECK_THROWS(delta_from_theta({bad}));
  Eigen::VectorXd bad2(2);
  bad2 << 0.3, 0.1;
  CHECK_THROWS(delta_from_theta({bad2}));
}

TEST_CASE("first-difference matrix pair at C=4", "[core]") {
  // D is banded with 1 on the diagonal and -1 below; its inverse is the
  // lower-triangular all-ones matrix (cumulative sum).
  const int C = 4;
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(C, C);
  for (int i = 1; i < C; ++i) D(i, i - 1) = -1.0;
  Eigen::MatrixXd Dinv = Eigen::MatrixXd::Zero(C, C);
  Dinv.triangularView<Eigen::Lower>().setOnes();

  Eigen::VectorXd delta(C);
  delta << 1, 2, 3, 4;
  Eigen::VectorXd theta = D * delta;
  for (int i = 0; i < C; ++i) CHECK(theta[i] == Approx(1.0));
  Eigen::VectorXd back = Dinv * theta;
  for (int i = 0; i < C; ++i) CHECK(back[i] == Approx(delta[i]));
  CHECK((D * Dinv - Eigen::MatrixXd::Identity(C, C)).norm() == Approx(0.0));

  // theta_from_delta matches multiplication by D on difference blocks.
  auto th = theta_from_delta({delta});
  for (int i = 0; i < C; ++i) CHECK(th[0][i] == Approx(theta[i]));
}

TEST_CASE("terminal lag sets trace the splits", "[core]") {
  TimeTree t0(20);
  auto s0 = terminal_lag_sets(t0);
  REQUIRE(s0.size() == 1);
  CHECK(s0[0] == std::make_pair(0, 20));

  TimeTree t1(20);
  t1.grow(0, 3);
  auto s1 = terminal_lag_sets(t1);
  REQUIRE(s1.size() == 2);
  CHECK(s1[0] == std::make_pair(0, 3));
  CHECK(s1[1] == std::make_pair(4, 20));

  TimeTree t2(20);
  auto [l, r] = t2.grow(0, 3);
  t2.grow(r, 8);
  auto s2 = terminal_lag_sets(t2);
  REQUIRE(s2.size() == 3);
  CHECK(s2[0] == std::make_pair(0, 3));
  CHECK(s2[1] == std::make_pair(4, 8));
  CHECK(s2[2] == std::make_pair(9, 20));
}

TEST_CASE("random time trees always partition the lags", "[core]") {
  RngStream rng(101, 0);
  for (int rep = 0; rep < 200; ++rep) {
    int L = static_cast<int>(rng.uniform_index(25));
    TimeTree tree = random_time_tree(L, rng);
    auto sets = terminal_lag_sets(tree);
    int expect = 0;
    for (auto [lo, hi] : sets) {
      REQUIRE(lo == expect);
      REQUIRE(hi >= lo);
      expect = hi + 1;
    }
    REQUIRE(expect == L + 1);
  }
}

TEST_CASE("prune collapses a second-generation node", "[core]") {
  TimeTree t(10);
  auto [l, r] = t.grow(0, 4);
  t.grow(l, 1);
  // node structure: root -> (split 1 subtree, {5..10})
  auto gen2 = t.gen2_indices();
  REQUIRE(gen2.size() == 1);
  t.prune(gen2[0]);
  auto sets = terminal_lag_sets(t);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0] == std::make_pair(0, 4));
  CHECK(sets[1] == std::make_pair(5, 10));
}

TEST_CASE("change_split shifts descendant intervals", "[core]") {
  TimeTree t(20);
  auto [l, r] = t.grow(0, 3);
  t.grow(r, 8);
  t.change_split(0, 5);
  auto sets = terminal_lag_sets(t);
  REQUIRE(sets.size() == 3);
  CHECK(sets[0] == std::make_pair(0, 5));
  CHECK(sets[1] == std::make_pair(6, 8));
  CHECK(sets[2] == std::make_pair(9, 20));
  // moving the root split past the inner split must throw
  CHECK_THROWS(t.change_split(0, 9));
}

TEST_CASE("ordered exposure bins cover the line", "[core]") {
  ExposureTree e0;
  auto b0 = ordered_exposure_bins(e0);
  REQUIRE(b0.size() == 1);
  CHECK(b0[0].lower == neg_inf);
  CHECK(b0[0].upper == pos_inf);

  ExposureTree e1;
  e1.split_node(0, 25.0);
  auto b1 = ordered_exposure_bins(e1);
  REQUIRE(b1.size() == 2);
  CHECK(b1[0].lower == neg_inf);
  CHECK(b1[0].upper == 25.0);
  CHECK(b1[1].lower == 25.0);
  CHECK(b1[1].upper == pos_inf);

  ExposureTree e2;
  auto [lo2, hi2] = e2.split_node(0, 25.0);
  e2.split_node(hi2, 28.0);
  auto b2 = ordered_exposure_bins(e2);
  REQUIRE(b2.size() == 3);
  CHECK(b2[0].upper == 25.0);
  CHECK(b2[1].lower == 25.0);
  CHECK(b2[1].upper == 28.0);
  CHECK(b2[2].lower == 28.0);
  CHECK(b2[2].upper == pos_inf);
}

TEST_CASE("exposure tree theta validation and delta", "[core]") {
  ExposureTree e;
  auto [l, r] = e.split_node(0, 10.0);
  e.split_node(r, 20.0);
  REQUIRE(e.terminal_count() == 3);

  Eigen::VectorXd th(3);
  th << 0.0, 0.4, 0.1;
  e.set_theta(th);
  auto d = e.delta();
  CHECK(d[2] == Approx(0.5));

  Eigen::VectorXd bad(3);
  bad << 0.1, 0.4, 0.1;
  CHECK_THROWS(e.set_theta(bad));
  bad << 0.0, -0.4, 0.1;
  CHECK_THROWS(e.set_theta(bad));
}

TEST_CASE("theta and delta maps invert each other", "[core]") {
  RngStream rng(77, 0);
  for (int rep = 0; rep < 100; ++rep) {
    int C = 1 + static_cast<int>(rng.uniform_index(6));
    Eigen::VectorXd th(C);
    th[0] = 0.0;
    for (int c = 1; c < C; ++c) th[c] = rng.gamma(1.0);
    auto delta = delta_from_theta({th});
    // nondecreasing
    for (int c = 1; c < C; ++c) REQUIRE(delta[0][c] >= delta[0][c - 1]);
    auto back = theta_from_delta(delta);
    for (int c = 0; c < C; ++c) REQUIRE(back[0][c] == Approx(th[c]).margin(1e-12));
  }
}
