#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mtdlnm/math.hpp"

namespace mtdlnm {

struct ExposureBin {
  double lower;  // -inf on the lowest bin
  double upper;  // +inf on the highest bin
};

struct ExposureNode {
  double lower = neg_inf;
  double upper = pos_inf;
  double split = std::numeric_limits<double>::quiet_NaN();
  int left = -1, right = -1;  // internal iff left >= 0
  int depth = 0;
  bool is_terminal() const { return left < 0; }
};

// Binary tree over exposure concentration. Terminal nodes, read in order of
// exposure, are contiguous bins covering (-inf, +inf). The increment vector
// theta has one entry per ordered bin with theta[0] pinned to zero; the level
// in bin c is the cumulative sum delta_c = sum_{c' <= c} theta_c'.
class ExposureTree {
 public:
  ExposureTree() : nodes_(1), theta_(Eigen::VectorXd::Zero(1)) {}

  const std::vector<ExposureNode>& nodes() const { return nodes_; }
  const ExposureNode& root() const { return nodes_[0]; }

  // Splits a terminal node; children keep exposure-interval bookkeeping.
  // Returns (left, right) node indices.
  std::pair<int, int> split_node(int idx, double value) {
    ExposureNode& nd = nodes_[idx];
    if (!nd.is_terminal())
      throw std::logic_error("ExposureTree::split_node: node not terminal");
    if (!(value > nd.lower && value < nd.upper))
      throw std::logic_error("ExposureTree::split_node: value outside node");
    ExposureNode l, r;
    l.lower = nd.lower;
    l.upper = value;
    r.lower = value;
    r.upper = nd.upper;
    l.depth = r.depth = nd.depth + 1;
    int li = static_cast<int>(nodes_.size());
    nodes_.push_back(l);
    int ri = static_cast<int>(nodes_.size());
    nodes_.push_back(r);
    nodes_[idx].split = value;
    nodes_[idx].left = li;
    nodes_[idx].right = ri;
    theta_ = Eigen::VectorXd::Zero(terminal_count());
    return {li, ri};
  }

  int terminal_count() const {
    int c = 0;
    for (const auto& nd : nodes_)
      if (nd.is_terminal()) ++c;
    return c;
  }

  // Terminal node indices in exposure order (in-order traversal).
  std::vector<int> ordered_terminals() const {
    std::vector<int> out;
    out.reserve(nodes_.size());
    in_order(0, out);
    return out;
  }

  const Eigen::VectorXd& theta() const { return theta_; }

  void set_theta(const Eigen::VectorXd& theta) {
    if (theta.size() != terminal_count())
      throw std::invalid_argument("ExposureTree::set_theta: length mismatch");
    if (theta[0] != 0.0)
      throw std::invalid_argument("ExposureTree::set_theta: theta[0] != 0");
    for (int c = 1; c < theta.size(); ++c)
      if (!(theta[c] >= 0.0))
        throw std::invalid_argument("ExposureTree::set_theta: negative increment");
    theta_ = theta;
  }

  Eigen::VectorXd delta() const {
    Eigen::VectorXd d(theta_.size());
    double acc = 0.0;
    for (int c = 0; c < theta_.size(); ++c) {
      acc += theta_[c];
      d[c] = acc;
    }
    return d;
  }

 private:
  void in_order(int idx, std::vector<int>& out) const {
    const ExposureNode& nd = nodes_[idx];
    if (nd.is_terminal()) {
      out.push_back(idx);
      return;
    }
    in_order(nd.left, out);
    in_order(nd.right, out);
  }

  std::vector<ExposureNode> nodes_;
  Eigen::VectorXd theta_;
};

// Ordered bins (lower bound ascending) of an exposure tree. The first lower
// bound is -inf and the last upper bound +inf by construction.
inline std::vector<ExposureBin> ordered_exposure_bins(const ExposureTree& tree) {
  std::vector<ExposureBin> bins;
  for (int idx : tree.ordered_terminals()) {
    const ExposureNode& nd = tree.nodes()[idx];
    bins.push_back({nd.lower, nd.upper});
  }
  return bins;
}

struct TimeNode {
  int lag_lo = 0, lag_hi = 0;  // inclusive lag interval
  int split = -1;              // lags <= split go left; internal iff >= 0
  int left = -1, right = -1;
  int depth = 0;
  ExposureTree etree;  // owned by terminal nodes
  bool is_terminal() const { return left < 0; }
  int lag_width() const { return lag_hi - lag_lo + 1; }
};

// Binary tree over lags 0..L. Splitting at location s sends lags <= s left.
// Each terminal node owns the nested ExposureTree for its lag interval.
// Value semantics: copying a TimeTree deep-copies it, so MH proposals are
// plain copies mutated in place.
class TimeTree {
 public:
  TimeTree() : nodes_(1) {}
  explicit TimeTree(int L) : nodes_(1) {
    if (L < 0) throw std::invalid_argument("TimeTree: L < 0");
    nodes_[0].lag_hi = L;
  }

  const std::vector<TimeNode>& nodes() const { return nodes_; }
  TimeNode& node(int idx) { return nodes_[idx]; }
  const TimeNode& node(int idx) const { return nodes_[idx]; }

  int max_lag() const { return nodes_[0].lag_hi; }

  std::pair<int, int> grow(int idx, int split) {
    TimeNode& nd = nodes_[idx];
    if (!nd.is_terminal()) throw std::logic_error("TimeTree::grow: not terminal");
    if (!(split >= nd.lag_lo && split < nd.lag_hi))
      throw std::logic_error("TimeTree::grow: split outside node");
    TimeNode l, r;
    l.lag_lo = nd.lag_lo;
    l.lag_hi = split;
    r.lag_lo = split + 1;
    r.lag_hi = nd.lag_hi;
    l.depth = r.depth = nd.depth + 1;
    int li = static_cast<int>(nodes_.size());
    nodes_.push_back(l);
    int ri = static_cast<int>(nodes_.size());
    nodes_.push_back(r);
    nodes_[idx].split = split;
    nodes_[idx].left = li;
    nodes_[idx].right = ri;
    nodes_[idx].etree = ExposureTree();
    return {li, ri};
  }

  // Collapse an internal node whose children are both terminal.
  void prune(int idx) {
    TimeNode& nd = nodes_[idx];
    if (nd.is_terminal() || !nodes_[nd.left].is_terminal() ||
        !nodes_[nd.right].is_terminal())
      throw std::logic_error("TimeTree::prune: node is not second-generation");
    nd.split = -1;
    nd.left = nd.right = -1;
    nd.etree = ExposureTree();
    compact();
  }

  // Move an internal split; descendant lag intervals are recomputed. The
  // caller must pick a location that keeps every descendant split valid.
  void change_split(int idx, int split) {
    TimeNode& nd = nodes_[idx];
    if (nd.is_terminal()) throw std::logic_error("TimeTree::change_split: terminal");
    nd.split = split;
    refresh_intervals(idx);
    validate_intervals(idx);
  }

  std::vector<int> terminal_indices() const {
    std::vector<int> out;
    in_order(0, out);
    return out;
  }

  std::vector<int> internal_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
      if (!nodes_[i].is_terminal()) out.push_back(i);
    return out;
  }

  // Internal nodes with two terminal children (prune candidates).
  std::vector<int> gen2_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
      const TimeNode& nd = nodes_[i];
      if (!nd.is_terminal() && nodes_[nd.left].is_terminal() &&
          nodes_[nd.right].is_terminal())
        out.push_back(i);
    }
    return out;
  }

  int terminal_count() const {
    return static_cast<int>(terminal_indices().size());
  }

 private:
  void in_order(int idx, std::vector<int>& out) const {
    const TimeNode& nd = nodes_[idx];
    if (nd.is_terminal()) {
      out.push_back(idx);
      return;
    }
    in_order(nd.left, out);
    in_order(nd.right, out);
  }

  void refresh_intervals(int idx) {
    TimeNode& nd = nodes_[idx];
    if (nd.is_terminal()) return;
    nodes_[nd.left].lag_lo = nd.lag_lo;
    nodes_[nd.left].lag_hi = nd.split;
    nodes_[nd.right].lag_lo = nd.split + 1;
    nodes_[nd.right].lag_hi = nd.lag_hi;
    refresh_intervals(nd.left);
    refresh_intervals(nd.right);
  }

  void validate_intervals(int idx) const {
    const TimeNode& nd = nodes_[idx];
    if (nd.lag_lo > nd.lag_hi)
      throw std::logic_error("TimeTree: empty lag interval after change");
    if (nd.is_terminal()) return;
    if (!(nd.split >= nd.lag_lo && nd.split < nd.lag_hi))
      throw std::logic_error("TimeTree: split outside interval after change");
    validate_intervals(nd.left);
    validate_intervals(nd.right);
  }

  // Rebuild the node vector in DFS order, dropping unreachable entries left
  // behind by prune.
  void compact() {
    std::vector<TimeNode> fresh;
    fresh.reserve(nodes_.size());
    copy_subtree(0, 0, fresh);
    nodes_ = std::move(fresh);
  }

  int copy_subtree(int idx, int depth, std::vector<TimeNode>& out) const {
    int at = static_cast<int>(out.size());
    out.push_back(nodes_[idx]);
    out[at].depth = depth;
    if (!nodes_[idx].is_terminal()) {
      int li = copy_subtree(nodes_[idx].left, depth + 1, out);
      int ri = copy_subtree(nodes_[idx].right, depth + 1, out);
      out[at].left = li;
      out[at].right = ri;
    }
    return at;
  }

  std::vector<TimeNode> nodes_;
};

// Lag intervals of the terminal nodes, left to right; always a partition of
// {0, ..., L}.
inline std::vector<std::pair<int, int>> terminal_lag_sets(const TimeTree& tree) {
  std::vector<std::pair<int, int>> out;
  for (int idx : tree.terminal_indices()) {
    const TimeNode& nd = tree.node(idx);
    out.emplace_back(nd.lag_lo, nd.lag_hi);
  }
  return out;
}

struct NestedTreeUnit {
  TimeTree time_tree;
  int index = 0;
};

// Per-block cumulative sums: delta_c = sum_{c' <= c} theta_c'. Validates the
// structural zero and nonnegativity on the way in.
inline std::vector<Eigen::VectorXd> delta_from_theta(
    const std::vector<Eigen::VectorXd>& theta_blocks) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(theta_blocks.size());
  for (const auto& th : theta_blocks) {
    if (th.size() == 0)
      throw std::invalid_argument("delta_from_theta: empty block");
    if (th[0] != 0.0)
      throw std::invalid_argument("delta_from_theta: theta[0] != 0");
    Eigen::VectorXd d(th.size());
    double acc = 0.0;
    for (int c = 0; c < th.size(); ++c) {
      if (!(th[c] >= 0.0))
        throw std::invalid_argument("delta_from_theta: negative increment");
      acc += th[c];
      d[c] = acc;
    }
    out.push_back(std::move(d));
  }
  return out;
}

// Forward first differences, the inverse of delta_from_theta.
inline std::vector<Eigen::VectorXd> theta_from_delta(
    const std::vector<Eigen::VectorXd>& delta_blocks) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(delta_blocks.size());
  for (const auto& d : delta_blocks) {
    Eigen::VectorXd th(d.size());
    th[0] = d[0];
    for (int c = 1; c < d.size(); ++c) th[c] = d[c] - d[c - 1];
    out.push_back(std::move(th));
  }
  return out;
}

}  // namespace mtdlnm
