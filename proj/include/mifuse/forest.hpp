#pragma once

// CART trees with Gini impurity and the bagged forest built from them. The same
// builder backs both the classifier and the feature-importance ranking.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mifuse/error.hpp"
#include "mifuse/seeding.hpp"

namespace mifuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ForestParams {
  int trees = 500;
  int max_depth = 0;     // 0: unlimited
  int max_features = 0;  // 0: floor(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;     // taken when x[feature] <= threshold
  int right = -1;
  std::array<double, 2> counts{0.0, 0.0};  // class 1, class 2 training samples reaching the node

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  /// Majority class of the reached leaf; ties go to class 1.
  template <typename Row>
  int predict(const Row& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    const auto& leaf = nodes[static_cast<std::size_t>(i)];
    return leaf.counts[1] > leaf.counts[0] ? 2 : 1;
  }
};

struct RandomForestModel {
  std::vector<DecisionTree> trees;
  int n_features = 0;
  ForestParams params;

  /// Hard majority vote over trees; a tied vote goes to class 1.
  template <typename Row>
  int predict_one(const Row& x) const {
    int votes2 = 0;
    for (const auto& t : trees) votes2 += t.predict(x) == 2 ? 1 : 0;
    const int votes1 = static_cast<int>(trees.size()) - votes2;
    return votes2 > votes1 ? 2 : 1;
  }
};

namespace detail {

inline void require_two_classes(const std::vector<int>& y, std::size_t min_per_class, const char* who) {
  std::size_t n1 = 0, n2 = 0;
  for (int v : y) {
    if (v == 1) ++n1;
    else if (v == 2) ++n2;
    else throw DataError(std::string(who) + ": labels must be 1 or 2");
  }
  if (n1 == 0 || n2 == 0) throw DataError(std::string(who) + ": training data contains a single class");
  if (n1 < min_per_class || n2 < min_per_class)
    throw DataError(std::string(who) + ": need at least " + std::to_string(min_per_class) + " trials per class");
}

/// Sum that does not depend on element order.
inline double sorted_sum(const Vector& v) {
  std::vector<double> tmp(v.data(), v.data() + v.size());
  std::sort(tmp.begin(), tmp.end());
  double s = 0.0;
  for (double x : tmp) s += x;
  return s;
}

inline double gini(double c1, double c2) {
  const double n = c1 + c2;
  if (n <= 0.0) return 0.0;
  const double p1 = c1 / n, p2 = c2 / n;
  return 1.0 - p1 * p1 - p2 * p2;
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<int>& y, const ForestParams& p, std::uint64_t seed)
      : x_(x), y_(y), params_(p), rng_(seed) {
    const auto d = static_cast<int>(x.cols());
    mtry_ = p.max_features > 0 ? std::min(p.max_features, d)
                               : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
    features_.resize(static_cast<std::size_t>(d));
    std::iota(features_.begin(), features_.end(), 0);
  }

  /// Grows one tree on `sample` (row indices, repeats allowed) and adds its impurity decreases
  /// to `importance`.
  DecisionTree grow(std::vector<int> sample, Vector& importance) {
    DecisionTree tree;
    root_size_ = static_cast<double>(sample.size());
    struct Pending {
      std::vector<int> rows;
      int node;
      int depth;
    };
    tree.nodes.emplace_back();
    std::vector<Pending> stack;
    stack.push_back({std::move(sample), 0, 0});
    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      auto& node = tree.nodes[static_cast<std::size_t>(cur.node)];
      for (int r : cur.rows) node.counts[static_cast<std::size_t>(y_[static_cast<std::size_t>(r)] - 1)] += 1.0;
      const bool pure = node.counts[0] == 0.0 || node.counts[1] == 0.0;
      const bool depth_cap = params_.max_depth > 0 && cur.depth >= params_.max_depth;
      if (pure || depth_cap || cur.rows.size() < 2) continue;

      const auto split = best_split(cur.rows, node.counts);
      if (split.feature < 0) continue;

      node.feature = split.feature;
      node.threshold = split.threshold;
      importance[split.feature] += split.decrease;

      std::vector<int> left, right;
      for (int r : cur.rows) (x_(r, split.feature) <= split.threshold ? left : right).push_back(r);
      const int li = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      const int ri = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes[static_cast<std::size_t>(cur.node)].left = li;
      tree.nodes[static_cast<std::size_t>(cur.node)].right = ri;
      stack.push_back({std::move(right), ri, cur.depth + 1});
      stack.push_back({std::move(left), li, cur.depth + 1});
    }
    return tree;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double decrease = 0.0;
  };

  // Visits features in a random order; stops once mtry features have been evaluated and a valid
  // split exists, otherwise keeps drawing.
  Split best_split(const std::vector<int>& rows, const std::array<double, 2>& counts) {
    std::shuffle(features_.begin(), features_.end(), rng_);
    const double n = static_cast<double>(rows.size());
    const double parent = gini(counts[0], counts[1]);
    Split best;
    double best_child = parent;  // weighted child impurity to beat
    std::vector<std::pair<double, int>> vals(rows.size());
    int evaluated = 0;
    for (int f : features_) {
      if (evaluated >= mtry_ && best.feature >= 0) break;
      ++evaluated;
      for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = {x_(rows[i], f), y_[static_cast<std::size_t>(rows[i])]};
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) continue;
      double l1 = 0.0, l2 = 0.0;
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        (vals[i].second == 1 ? l1 : l2) += 1.0;
        if (vals[i].first == vals[i + 1].first) continue;
        const double nl = l1 + l2, nr = n - nl;
        const double child = (nl * gini(l1, l2) + nr * gini(counts[0] - l1, counts[1] - l2)) / n;
        if (!(child < parent - 1e-15)) continue;
        double mid = 0.5 * (vals[i].first + vals[i + 1].first);
        if (!(mid < vals[i + 1].first)) mid = vals[i].first;
        // equal impurity: lower threshold wins, so the choice does not depend on visit order
        if (best.feature < 0 || child < best_child || (child == best_child && mid < best.threshold)) {
          best_child = child;
          best.feature = f;
          best.threshold = mid;
        }
      }
    }
    if (best.feature >= 0) best.decrease = (n / root_size_) * (parent - best_child);
    return best;
  }

  const Matrix& x_;
  const std::vector<int>& y_;
  ForestParams params_;
  std::mt19937_64 rng_;
  int mtry_ = 1;
  double root_size_ = 1.0;
  std::vector<int> features_;
};

}  // namespace detail

struct ForestFit {
  RandomForestModel model;
  Vector importance;  // mean per-tree normalized Gini decrease; sums to 1
};

/// Bootstrap-bagged CART forest. Tree t draws from a seed derived from (seed, t), so the result
/// does not depend on the order trees are built in.
inline ForestFit grow_forest(const Matrix& x, const std::vector<int>& y, const ForestParams& params,
                             std::size_t min_per_class = 1) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) throw DataError("forest: row/label count mismatch");
  if (x.cols() < 1) throw DataError("forest: no features");
  if (!x.allFinite()) throw DataError("forest: non-finite features");
  if (params.trees < 1) throw ConfigError("forest: trees must be >= 1");
  if (params.max_depth < 0 || params.max_features < 0) throw ConfigError("forest: negative depth/feature limit");
  detail::require_two_classes(y, min_per_class, "forest");

  ForestFit fit;
  fit.model.n_features = static_cast<int>(x.cols());
  fit.model.params = params;
  fit.importance = Vector::Zero(x.cols());
  const auto n = static_cast<int>(x.rows());
  for (int t = 0; t < params.trees; ++t) {
    detail::TreeBuilder builder(x, y, params, derive_seed(params.seed, "tree", static_cast<std::uint64_t>(t)));
    std::vector<int> sample(static_cast<std::size_t>(n));
    if (params.bootstrap) {
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (auto& s : sample) s = pick(builder.rng());
    } else {
      std::iota(sample.begin(), sample.end(), 0);
    }
    Vector tree_imp = Vector::Zero(x.cols());
    fit.model.trees.push_back(builder.grow(std::move(sample), tree_imp));
    const double total = detail::sorted_sum(tree_imp);
    if (total > 0.0) fit.importance += tree_imp / total;
  }
  const double total = detail::sorted_sum(fit.importance);
  if (!(total > 0.0)) throw DataError("forest: degenerate input, no feature admits a split");
  fit.importance /= total;
  return fit;
}

inline RandomForestModel train_rf(const Matrix& x, const std::vector<int>& y, const ForestParams& params) {
  return grow_forest(x, y, params).model;
}

inline std::vector<int> rf_predict(const RandomForestModel& model, const Matrix& x) {
  if (x.cols() != model.n_features)
    throw DataError("random forest: feature dimension " + std::to_string(x.cols()) + " != " +
                    std::to_string(model.n_features));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(model.predict_one(x.row(i)));
  return out;
}

}  // namespace mifuse
