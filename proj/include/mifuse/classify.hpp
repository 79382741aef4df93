#pragma once

// Standardization, SVM and Random-Forest classifiers, metrics and model files.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "mifuse/binary_io.hpp"
#include "mifuse/error.hpp"
#include "mifuse/forest.hpp"

namespace mifuse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Standardizer

struct Standardizer {
  Vector mean;
  Vector scale;                  // population std; 1 for constant columns
  std::vector<bool> constant;   // columns whose training std was zero
};

inline Standardizer fit_standardizer(const Matrix& x) {
  if (x.rows() < 2) throw DataError("standardizer: need at least 2 training rows");
  if (x.cols() < 1) throw DataError("standardizer: no features");
  Standardizer s;
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  s.constant.assign(static_cast<std::size_t>(x.cols()), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean[j]).square().mean();
    const double sd = std::sqrt(var);
    if (sd > 0.0 && std::isfinite(sd)) {
      s.scale[j] = sd;
    } else {
      s.scale[j] = 1.0;
      s.constant[static_cast<std::size_t>(j)] = true;
    }
  }
  return s;
}

inline Matrix apply_standardizer(const Standardizer& s, const Matrix& x) {
  if (x.cols() != s.mean.size()) throw DataError("standardizer: feature dimension mismatch");
  Matrix out = (x.rowwise() - s.mean.transpose()).array().rowwise() / s.scale.transpose().array();
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (s.constant[static_cast<std::size_t>(j)]) out.col(j).setZero();
  return out;
}

// ---------------------------------------------------------------------------
// SVM

enum class KernelType : std::uint8_t { linear = 0, rbf = 1 };

struct SvmParams {
  KernelType kernel = KernelType::rbf;
  double c = 1.0;
  double gamma = 0.0;  // <= 0: 1 / (d * mean feature variance)
  double tol = 1e-3;
  long max_iter = 100000;
};

struct SvmModel {
  KernelType kernel = KernelType::rbf;
  double gamma = 0.0;
  double c = 1.0;
  Matrix support_vectors;  // rows
  Vector dual_coef;        // alpha_i * y_i, y = +1 for class 1
  double bias = 0.0;       // decision = sum dual_coef K(sv, x) + bias
  double tol = 1e-3;
  long iterations = 0;

  double kernel_value(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) const {
    if (kernel == KernelType::linear) return a.dot(b);
    return std::exp(-gamma * (a - b).squaredNorm());
  }

  double decision(const Eigen::Ref<const Vector>& x) const {
    double f = bias;
    for (Eigen::Index i = 0; i < support_vectors.rows(); ++i)
      f += dual_coef[i] * kernel_value(support_vectors.row(i).transpose(), x);
    return f;
  }
};

inline double default_gamma(const Matrix& x) {
  double mean_var = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    mean_var += (x.col(j).array() - mu).square().mean();
  }
  mean_var /= static_cast<double>(x.cols());
  return mean_var > 0.0 ? 1.0 / (static_cast<double>(x.cols()) * mean_var) : 1.0;
}

/// Soft-margin dual solved by sequential minimal optimization with second-order working-set
/// selection. Stops when the maximal KKT violation falls below tol.
inline SvmModel train_svm(const Matrix& x, const std::vector<int>& labels, const SvmParams& params) {
  const auto n = x.rows();
  if (n != static_cast<Eigen::Index>(labels.size())) throw DataError("SVM: row/label count mismatch");
  if (!x.allFinite()) throw DataError("SVM: non-finite features");
  if (!(params.c > 0.0)) throw ConfigError("SVM: C must be positive");
  if (!(params.tol > 0.0)) throw ConfigError("SVM: tol must be positive");
  if (params.max_iter < 1) throw ConfigError("SVM: max_iter must be >= 1");
  detail::require_two_classes(labels, 1, "SVM");

  SvmModel model;
  model.kernel = params.kernel;
  model.c = params.c;
  model.tol = params.tol;
  model.gamma = params.kernel == KernelType::rbf ? (params.gamma > 0.0 ? params.gamma : default_gamma(x)) : 0.0;

  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  Matrix q(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j)
      q(i, j) = q(j, i) = y[i] * y[j] * model.kernel_value(x.row(i).transpose(), x.row(j).transpose());

  const double c = params.c;
  constexpr double tau = 1e-12;
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vector alpha = Vector::Zero(n);
  Vector grad = Vector::Constant(n, -1.0);
  auto upper = [&](Eigen::Index t) { return alpha[t] >= c; };
  auto lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };

  long iter = 0;
  for (;; ++iter) {
    double gmax = -inf, gmax2 = -inf, best_obj = inf;
    Eigen::Index i = -1, j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (y[t] > 0 ? !upper(t) : !lower(t)) {
        const double v = -y[t] * grad[t];
        if (v >= gmax) {
          gmax = v;
          i = t;
        }
      }
    }
    if (i >= 0) {
      for (Eigen::Index t = 0; t < n; ++t) {
        if (y[t] > 0 ? lower(t) : upper(t)) continue;
        const double v = y[t] * grad[t];  // = -(-y G) for the low set
        gmax2 = std::max(gmax2, v);
        const double diff = gmax + v;
        if (diff > 0.0) {
          double quad = q(i, i) + q(t, t) - 2.0 * y[i] * y[t] * q(i, t);
          if (quad <= 0.0) quad = tau;
          const double obj = -(diff * diff) / quad;
          if (obj <= best_obj) {
            best_obj = obj;
            j = t;
          }
        }
      }
    }
    if (i < 0 || j < 0 || gmax + gmax2 < params.tol) break;
    if (iter >= params.max_iter) {
      long violations = 0;
      for (Eigen::Index t = 0; t < n; ++t) {
        const double v = -y[t] * grad[t];
        const bool in_up = y[t] > 0 ? !upper(t) : !lower(t);
        const bool in_low = y[t] > 0 ? !lower(t) : !upper(t);
        if ((in_up && v > -gmax2 + params.tol) || (in_low && v < gmax - params.tol)) ++violations;
      }
      throw NumericalError("SVM: no convergence after " + std::to_string(params.max_iter) + " iterations (" +
                           std::to_string(violations) + " KKT violations)");
    }

    const double ai = alpha[i], aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha[i] > c) { alpha[i] = c; alpha[j] = c - diff; }
      } else {
        if (alpha[j] > c) { alpha[j] = c; alpha[i] = c + diff; }
      }
    } else {
      double quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) { alpha[i] = c; alpha[j] = sum - c; }
      } else {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
      }
      if (sum > c) {
        if (alpha[j] > c) { alpha[j] = c; alpha[i] = sum - c; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
      }
    }
    const double dai = alpha[i] - ai, daj = alpha[j] - aj;
    grad += q.col(i) * dai + q.col(j) * daj;
  }
  model.iterations = iter;

  // rho from free vectors, else midpoint of the feasible interval
  double ub = inf, lb = -inf, sum_free = 0.0;
  long n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
  model.bias = -rho;

  std::vector<Eigen::Index> sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha[t] > 0.0) sv.push_back(t);
  model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  model.dual_coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    model.support_vectors.row(static_cast<Eigen::Index>(k)) = x.row(sv[k]);
    model.dual_coef[static_cast<Eigen::Index>(k)] = alpha[sv[k]] * y[sv[k]];
  }
  return model;
}

/// Class 1 when the decision value is >= 0, class 2 otherwise.
inline std::vector<int> svm_predict(const SvmModel& model, const Matrix& x) {
  if (model.support_vectors.rows() > 0 && x.cols() != model.support_vectors.cols())
    throw DataError("SVM: feature dimension " + std::to_string(x.cols()) + " != " +
                    std::to_string(model.support_vectors.cols()));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(model.decision(x.row(i).transpose()) >= 0.0 ? 1 : 2);
  return out;
}

// ---------------------------------------------------------------------------
// Pluggable classifier

struct ClassifierConfig {
  enum class Kind { svm, rf };
  Kind kind = Kind::svm;
  SvmParams svm;
  ForestParams rf{100, 0, 0, true, 0};
};

using TrainedClassifier = std::variant<SvmModel, RandomForestModel>;

inline TrainedClassifier fit_classifier(const ClassifierConfig& cfg, const Matrix& x, const std::vector<int>& y,
                                        std::uint64_t seed) {
  if (cfg.kind == ClassifierConfig::Kind::svm) return train_svm(x, y, cfg.svm);
  ForestParams p = cfg.rf;
  p.seed = seed;
  return train_rf(x, y, p);
}

inline std::vector<int> predict(const TrainedClassifier& model, const Matrix& x) {
  return std::visit(
      [&](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, SvmModel>) return svm_predict(m, x);
        else return rf_predict(m, x);
      },
      model);
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double accuracy = 0.0;  // percent, 100 * tc / tt
  double precision = 0.0; // macro over the two classes
  double recall = 0.0;
  double f1 = 0.0;
  long tc = 0;
  long tt = 0;
  std::array<long, 2> tp{0, 0};  // index 0: class 1
  std::array<long, 2> fp{0, 0};
  std::array<long, 2> fn{0, 0};

  bool operator==(const MetricsReport&) const = default;
};

/// Per-class precision and recall are 0 when their denominator is 0; F1 likewise.
inline MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size()) throw DataError("metrics: label vectors differ in length");
  if (y_true.empty()) throw DataError("metrics: no predictions");
  MetricsReport r;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (!(t == 1 || t == 2) || !(p == 1 || p == 2)) throw DataError("metrics: labels must be 1 or 2");
    if (t == p) {
      ++r.tc;
      ++r.tp[static_cast<std::size_t>(t - 1)];
    } else {
      ++r.fn[static_cast<std::size_t>(t - 1)];
      ++r.fp[static_cast<std::size_t>(p - 1)];
    }
  }
  r.tt = static_cast<long>(y_true.size());
  r.accuracy = 100.0 * static_cast<double>(r.tc) / static_cast<double>(r.tt);
  for (std::size_t c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(r.tp[c]);
    const double pd = tp + static_cast<double>(r.fp[c]);
    const double rd = tp + static_cast<double>(r.fn[c]);
    const double p = pd > 0 ? tp / pd : 0.0;
    const double rc = rd > 0 ? tp / rd : 0.0;
    r.precision += p / 2.0;
    r.recall += rc / 2.0;
    r.f1 += (p + rc > 0 ? 2.0 * p * rc / (p + rc) : 0.0) / 2.0;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Model files: 16-byte magic, version byte, then the model fields.

inline constexpr detail::Magic kSvmMagic = detail::make_magic("MIFUSE-SVMMODEL\0");
inline constexpr detail::Magic kForestMagic = detail::make_magic("MIFUSE-RFMODEL\0\0");
inline constexpr std::uint8_t kModelFormatVersion = 1;

inline void save_model(const SvmModel& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model " + path.string());
  detail::BinaryWriter w(out);
  w.put_bytes(kSvmMagic.data(), kSvmMagic.size());
  w.put<std::uint8_t>(kModelFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kernel));
  w.put<double>(m.gamma);
  w.put<double>(m.c);
  w.put<double>(m.bias);
  w.put<double>(m.tol);
  w.put<std::int64_t>(m.iterations);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.support_vectors.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.support_vectors.cols()));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m.support_vectors;
  w.put_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
  w.put_doubles(m.dual_coef.data(), static_cast<std::size_t>(m.dual_coef.size()));
  w.check(path.string());
}

inline SvmModel load_svm_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  detail::BinaryReader r(in, path.string());
  r.expect_magic(kSvmMagic);
  if (r.get<std::uint8_t>() != kModelFormatVersion) throw DataError(path.string() + ": unsupported model version");
  SvmModel m;
  const auto kernel = r.get<std::uint8_t>();
  if (kernel > 1) throw DataError(path.string() + ": unknown kernel");
  m.kernel = static_cast<KernelType>(kernel);
  m.gamma = r.get<double>();
  m.c = r.get<double>();
  m.bias = r.get<double>();
  m.tol = r.get<double>();
  m.iterations = static_cast<long>(r.get<std::int64_t>());
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (rows > (1ULL << 28) || cols > (1ULL << 28)) throw DataError(path.string() + ": corrupt dimensions");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Eigen::Index>(rows),
                                                                             static_cast<Eigen::Index>(cols));
  r.get_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
  m.support_vectors = rm;
  m.dual_coef.resize(static_cast<Eigen::Index>(rows));
  r.get_doubles(m.dual_coef.data(), static_cast<std::size_t>(rows));
  return m;
}

inline void save_model(const RandomForestModel& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model " + path.string());
  detail::BinaryWriter w(out);
  w.put_bytes(kForestMagic.data(), kForestMagic.size());
  w.put<std::uint8_t>(kModelFormatVersion);
  w.put<std::int32_t>(m.n_features);
  w.put<std::int32_t>(m.params.trees);
  w.put<std::int32_t>(m.params.max_depth);
  w.put<std::int32_t>(m.params.max_features);
  w.put<std::uint8_t>(m.params.bootstrap ? 1 : 0);
  w.put<std::uint64_t>(m.params.seed);
  w.put<std::uint64_t>(m.trees.size());
  for (const auto& t : m.trees) {
    w.put<std::uint64_t>(t.nodes.size());
    for (const auto& n : t.nodes) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      w.put<double>(n.counts[0]);
      w.put<double>(n.counts[1]);
    }
  }
  w.check(path.string());
}

inline RandomForestModel load_forest_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  detail::BinaryReader r(in, path.string());
  r.expect_magic(kForestMagic);
  if (r.get<std::uint8_t>() != kModelFormatVersion) throw DataError(path.string() + ": unsupported model version");
  RandomForestModel m;
  m.n_features = r.get<std::int32_t>();
  m.params.trees = r.get<std::int32_t>();
  m.params.max_depth = r.get<std::int32_t>();
  m.params.max_features = r.get<std::int32_t>();
  m.params.bootstrap = r.get<std::uint8_t>() != 0;
  m.params.seed = r.get<std::uint64_t>();
  const auto n_trees = r.get<std::uint64_t>();
  if (n_trees > (1ULL << 24)) throw DataError(path.string() + ": corrupt tree count");
  for (std::uint64_t t = 0; t < n_trees; ++t) {
    DecisionTree tree;
    const auto n_nodes = r.get<std::uint64_t>();
    if (n_nodes == 0 || n_nodes > (1ULL << 28)) throw DataError(path.string() + ": corrupt node count");
    for (std::uint64_t k = 0; k < n_nodes; ++k) {
      TreeNode n;
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      n.counts[0] = r.get<double>();
      n.counts[1] = r.get<double>();
      const auto limit = static_cast<std::int32_t>(n_nodes);
      const auto self = static_cast<std::int32_t>(k);
      if (!n.is_leaf() && (n.feature >= m.n_features || n.left <= self || n.right <= self || n.left >= limit ||
                           n.right >= limit || !std::isfinite(n.threshold)))
        throw DataError(path.string() + ": corrupt tree node");
      tree.nodes.push_back(n);
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

}  // namespace mifuse
