#pragma once

// Per-region common spatial patterns.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mifuse/error.hpp"
#include "mifuse/spd.hpp"

namespace mifuse {

/// Trace-normalized spatial covariance E E^T / tr(E E^T) of a channels x samples block,
/// regularized when ill-conditioned.
inline SpdMatrix normalized_covariance(const Matrix& block, double eps_scale = 1e-8) {
  if (block.cols() < 2) throw DataError("covariance: block needs at least 2 samples");
  if (!block.allFinite()) throw DataError("covariance: block has non-finite samples");
  const Matrix gram = block * block.transpose();
  const double tr = gram.trace();
  if (!(tr > 0.0)) throw DataError("covariance: zero-energy block");
  return regularize_spd(gram / tr, eps_scale);
}

/// Unbiased sample covariance E E^T / (L - 1) of a zero-mean block, regularized when ill-conditioned.
inline SpdMatrix sample_covariance(const Matrix& block, double eps_scale = 1e-8) {
  if (block.cols() < 2) throw DataError("covariance: block needs at least 2 samples");
  if (!block.allFinite()) throw DataError("covariance: block has non-finite samples");
  const Matrix gram = block * block.transpose() / static_cast<double>(block.cols() - 1);
  if (!(gram.trace() > 0.0)) throw DataError("covariance: zero-energy block");
  return regularize_spd(gram, eps_scale);
}

/// Full solution of S1 w = lambda (S1 + S2) w. Columns of `vectors` satisfy
/// W^T (S1 + S2) W = I; eigenvalues ascending, in [0, 1].
struct CspDecomposition {
  Matrix vectors;
  Vector eigenvalues;
};

inline Matrix mean_of(const std::vector<SpdMatrix>& covs) {
  Matrix acc = Matrix::Zero(covs.front().dim(), covs.front().dim());
  for (const auto& c : covs) acc += c.values();
  return acc / static_cast<double>(covs.size());
}

/// Whitening of the composite covariance followed by a symmetric eigenproblem.
inline CspDecomposition csp_decompose(const Matrix& s1, const Matrix& s2) {
  if (s1.rows() != s2.rows() || s1.rows() != s1.cols() || s2.rows() != s2.cols())
    throw NumericalError("CSP: class covariance dimensions differ");
  const SpdMatrix composite(detail::symmetrized(s1 + s2));
  const Matrix p = spd_power_matrix(composite, -0.5);
  Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrized(p * s1 * p));
  if (es.info() != Eigen::Success) throw NumericalError("CSP: eigen-solver failed");
  return {p * es.eigenvectors(), es.eigenvalues()};
}

struct SpatialFilterBank {
  std::string region;
  int pairs = 1;
  Matrix filters;      // channels x 2*pairs, unit-norm columns
  Vector eigenvalues;  // per column, descending
};

/// Keeps `pairs` filters from each end of the spectrum: largest eigenvalues first, then the smallest
/// ones, giving descending eigenvalues across columns.
inline SpatialFilterBank fit_csp(const std::vector<SpdMatrix>& class1, const std::vector<SpdMatrix>& class2,
                                 int pairs, std::string region = {}) {
  if (class1.empty() || class2.empty()) throw DataError("CSP: both classes need at least one trial");
  const auto n = class1.front().dim();
  for (const auto* list : {&class1, &class2})
    for (const auto& c : *list)
      if (c.dim() != n) throw DataError("CSP: covariance dimensions differ");
  if (pairs < 1 || 2 * pairs > n)
    throw ConfigError("CSP: pairs must satisfy 1 <= pairs and 2*pairs <= " + std::to_string(n));

  const auto dec = csp_decompose(mean_of(class1), mean_of(class2));
  const Vector& lambda = dec.eigenvalues;
  if (lambda.maxCoeff() - lambda.minCoeff() < 1e-12)
    throw NumericalError("CSP: degenerate classes (all generalized eigenvalues equal)");

  SpatialFilterBank bank;
  bank.region = std::move(region);
  bank.pairs = pairs;
  bank.filters.resize(n, 2 * pairs);
  bank.eigenvalues.resize(2 * pairs);
  std::vector<Eigen::Index> order;
  for (int k = 0; k < pairs; ++k) order.push_back(n - 1 - k);
  for (int k = pairs - 1; k >= 0; --k) order.push_back(k);
  for (Eigen::Index col = 0; col < 2 * pairs; ++col) {
    Vector v = dec.vectors.col(order[static_cast<std::size_t>(col)]);
    v.normalize();
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    bank.filters.col(col) = v;
    bank.eigenvalues[col] = lambda[order[static_cast<std::size_t>(col)]];
  }
  if (!bank.filters.allFinite()) throw NumericalError("CSP: non-finite filter");
  return bank;
}

inline double unbiased_variance(const Eigen::Ref<const Vector>& x) {
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

/// log(var(v_w^T x)) per filter, unbiased variance over time.
inline Vector csp_features(const SpatialFilterBank& bank, const Matrix& block) {
  if (block.rows() != bank.filters.rows())
    throw DataError("CSP features: block has " + std::to_string(block.rows()) + " channels, filters expect " +
                    std::to_string(bank.filters.rows()));
  if (block.cols() < 2) throw DataError("CSP features: block needs at least 2 samples");
  const Matrix projected = bank.filters.transpose() * block;
  Vector out(projected.rows());
  for (Eigen::Index w = 0; w < projected.rows(); ++w) {
    const double var = unbiased_variance(projected.row(w).transpose());
    if (!(var > 0.0))
      throw NumericalError("CSP features: projected variance is zero for filter " + std::to_string(w) +
                           (bank.region.empty() ? "" : " of region '" + bank.region + "'"));
    out[w] = std::log(var);
  }
  return out;
}

}  // namespace mifuse
