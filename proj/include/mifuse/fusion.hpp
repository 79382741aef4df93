#pragma once

// Feature fusion across regions and Random-Forest importance based selection.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mifuse/error.hpp"
#include "mifuse/forest.hpp"

namespace mifuse {

namespace fs = std::filesystem;

struct BlockSpan {
  std::string region;
  std::string block;  // "csp", "fcm" or "tsm"
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
  bool operator==(const BlockSpan&) const = default;
};

using BlockLayout = std::vector<BlockSpan>;

struct RegionBlocks {
  Vector csp;
  Vector fcm;
  Vector tsm;
};

struct FusedFeatureVector {
  Vector values;
  BlockLayout layout;
  std::int64_t trial_index = 0;
  int label = 0;

  Vector block(const BlockSpan& span) const { return values.segment(span.offset, span.length); }
};

/// Concatenates, for each region in `region_order`, its CSP, FCM and TSM blocks. `blocks` may list
/// regions in any order. When `expected` is given the resulting layout must match it.
inline FusedFeatureVector fuse_trial(const std::map<std::string, RegionBlocks>& blocks,
                                     const std::vector<std::string>& region_order, std::int64_t trial_index = 0,
                                     int label = 0, const BlockLayout* expected = nullptr) {
  FusedFeatureVector out;
  out.trial_index = trial_index;
  out.label = label;
  Eigen::Index total = 0;
  for (const auto& region : region_order) {
    auto it = blocks.find(region);
    if (it == blocks.end()) throw DataError("fusion: region '" + region + "' contributed no blocks");
    const RegionBlocks& b = it->second;
    for (const auto& [name, vec] : {std::pair<const char*, const Vector*>{"csp", &b.csp}, {"fcm", &b.fcm}, {"tsm", &b.tsm}}) {
      if (vec->size() == 0) throw DataError("fusion: region '" + region + "' is missing its " + name + " block");
      out.layout.push_back({region, name, total, vec->size()});
      total += vec->size();
    }
  }
  if (blocks.size() != region_order.size()) throw DataError("fusion: blocks supplied for unknown regions");
  out.values.resize(total);
  std::size_t k = 0;
  for (const auto& region : region_order) {
    const RegionBlocks& b = blocks.at(region);
    for (const Vector* vec : {&b.csp, &b.fcm, &b.tsm}) {
      out.values.segment(out.layout[k].offset, out.layout[k].length) = *vec;
      ++k;
    }
  }
  if (expected && *expected != out.layout) throw DataError("fusion: layout differs from earlier trials");
  return out;
}

struct FeatureMatrix {
  Matrix rows;  // trials x features
  std::vector<int> labels;
  std::vector<std::int64_t> trial_indices;
  BlockLayout layout;

  Eigen::Index features() const { return rows.cols(); }
  std::size_t trials() const { return labels.size(); }

  /// Header names, "<region>.<block>.<k>" per column; selected matrices keep their source names.
  std::vector<std::string> column_names() const {
    if (!names.empty()) return names;
    std::vector<std::string> out;
    for (const auto& span : layout)
      for (Eigen::Index k = 0; k < span.length; ++k)
        out.push_back(span.region + "." + span.block + "." + std::to_string(k));
    while (static_cast<Eigen::Index>(out.size()) < rows.cols()) out.push_back("f" + std::to_string(out.size()));
    return out;
  }

  std::vector<std::string> names;  // explicit column names overriding the layout-derived ones
};

inline FeatureMatrix stack_features(const std::vector<FusedFeatureVector>& trials) {
  FeatureMatrix m;
  if (trials.empty()) return m;
  m.layout = trials.front().layout;
  m.rows.resize(static_cast<Eigen::Index>(trials.size()), trials.front().values.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].layout != m.layout) throw DataError("fusion: layout mismatch at trial " + std::to_string(i));
    m.rows.row(static_cast<Eigen::Index>(i)) = trials[i].values.transpose();
    m.labels.push_back(trials[i].label);
    m.trial_indices.push_back(trials[i].trial_index);
  }
  return m;
}

/// Mean normalized Gini decrease per feature over a bagged forest; sums to 1.
inline Vector rf_feature_importance(const FeatureMatrix& x, const ForestParams& params) {
  if (!x.rows.allFinite()) throw DataError("feature importance: non-finite features");
  return grow_forest(x.rows, x.labels, params, 2).importance;
}

struct SelectionPolicy {
  enum class Kind { none, top_k, cumulative };
  Kind kind = Kind::top_k;
  int k = 64;
  double fraction = 1.0;

  static SelectionPolicy none() { return {Kind::none, 0, 1.0}; }
  static SelectionPolicy top(int k) { return {Kind::top_k, k, 1.0}; }
  static SelectionPolicy cumulative(double f) { return {Kind::cumulative, 0, f}; }

  /// "none", "top:K" or "cum:F".
  static SelectionPolicy parse(const std::string& text) {
    try {
      if (text == "none") return none();
      if (text.rfind("top:", 0) == 0) {
        std::size_t used = 0;
        const int k = std::stoi(text.substr(4), &used);
        if (used != text.size() - 4) throw std::invalid_argument(text);
        return top(k);
      }
      if (text.rfind("cum:", 0) == 0) {
        std::size_t used = 0;
        const double f = std::stod(text.substr(4), &used);
        if (used != text.size() - 4) throw std::invalid_argument(text);
        return cumulative(f);
      }
    } catch (const std::logic_error&) {
    }
    throw ConfigError("selection policy '" + text + "' (expected none, top:K or cum:F)");
  }

  std::string describe() const {
    switch (kind) {
      case Kind::none: return "none";
      case Kind::top_k: return "top:" + std::to_string(k);
      case Kind::cumulative: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "cum:%.17g", fraction);
        return buf;
      }
    }
    return "none";
  }

  bool operator==(const SelectionPolicy&) const = default;
};

struct FeatureSelection {
  std::vector<int> kept_indices;  // ascending
  Vector importance_scores;       // full length; empty for the identity selection
  std::string policy;
};

/// Score-descending order, ties by lower index.
inline std::vector<int> rank_by_score(const Vector& scores) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

inline FeatureSelection select_features(const Vector& scores, const SelectionPolicy& policy) {
  if (scores.size() == 0) throw DataError("selection: empty score vector");
  if (!scores.allFinite() || scores.minCoeff() < 0.0) throw DataError("selection: scores must be finite and >= 0");
  FeatureSelection sel;
  sel.importance_scores = scores;
  sel.policy = policy.describe();
  const auto order = rank_by_score(scores);
  std::size_t keep = 0;
  switch (policy.kind) {
    case SelectionPolicy::Kind::none:
      keep = order.size();
      break;
    case SelectionPolicy::Kind::top_k:
      if (policy.k < 1 || policy.k > scores.size())
        throw ConfigError("selection: top_k(" + std::to_string(policy.k) + ") outside [1, " +
                          std::to_string(scores.size()) + "]");
      keep = static_cast<std::size_t>(policy.k);
      break;
    case SelectionPolicy::Kind::cumulative: {
      if (!(policy.fraction > 0.0 && policy.fraction <= 1.0))
        throw ConfigError("selection: cumulative fraction must lie in (0, 1]");
      const double total = scores.sum();
      const double target = policy.fraction * total;
      double acc = 0.0;
      // the slack absorbs rounding in sums such as 0.5 + 0.3 vs 0.8
      const double slack = 1e-12 * std::max(1.0, total);
      while (keep < order.size() && acc < target - slack) acc += scores[order[keep++]];
      if (policy.fraction == 1.0)
        while (keep < order.size() && scores[order[keep]] > 0.0) ++keep;
      keep = std::max<std::size_t>(keep, 1);
      break;
    }
  }
  sel.kept_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(sel.kept_indices.begin(), sel.kept_indices.end());
  return sel;
}

inline FeatureSelection identity_selection(Eigen::Index features) {
  FeatureSelection sel;
  sel.kept_indices.resize(static_cast<std::size_t>(features));
  std::iota(sel.kept_indices.begin(), sel.kept_indices.end(), 0);
  sel.policy = "none";
  return sel;
}

inline FeatureMatrix apply_selection(const FeatureMatrix& x, const FeatureSelection& sel) {
  if (sel.kept_indices.empty()) throw DataError("selection: no features kept");
  const auto all_names = x.column_names();
  FeatureMatrix out;
  out.labels = x.labels;
  out.trial_indices = x.trial_indices;
  out.layout = x.layout;
  out.rows.resize(x.rows.rows(), static_cast<Eigen::Index>(sel.kept_indices.size()));
  for (std::size_t j = 0; j < sel.kept_indices.size(); ++j) {
    const int c = sel.kept_indices[j];
    if (c < 0 || c >= x.features())
      throw DataError("selection: index " + std::to_string(c) + " outside [0, " + std::to_string(x.features()) + ")");
    out.rows.col(static_cast<Eigen::Index>(j)) = x.rows.col(c);
    out.names.push_back(all_names[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// CSV with a header of column names and a leading label column; values printed round-trip exact.
inline void write_feature_csv(const FeatureMatrix& x, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "trial,label";
  for (const auto& n : x.column_names()) out << ',' << n;
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < x.rows.rows(); ++i) {
    out << x.trial_indices[static_cast<std::size_t>(i)] << ',' << x.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < x.rows.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x.rows(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace mifuse
