#pragma once

// Symmetric positive-definite matrix kernel: eigen-based matrix functions, the
// affine-invariant metric, Karcher mean and tangent-space mapping.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mifuse/error.hpp"

namespace mifuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline double symmetry_defect(const Matrix& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/// Real symmetric matrix (symmetric to 1e-10 relative; stored exactly symmetric).
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(const Matrix& values) {
    if (values.rows() != values.cols()) throw NumericalError("symmetric matrix must be square");
    if (!values.allFinite()) throw NumericalError("symmetric matrix has non-finite entries");
    if (detail::symmetry_defect(values) > 1e-10) throw NumericalError("matrix is not symmetric");
    values_ = detail::symmetrized(values);
  }

  const Matrix& values() const { return values_; }
  Eigen::Index dim() const { return values_.rows(); }

 private:
  Matrix values_;
};

/// Symmetric matrix with strictly positive spectrum, verified on construction.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  explicit SpdMatrix(const Matrix& values) {
    if (values.rows() != values.cols() || values.rows() == 0) throw NumericalError("SPD matrix must be square");
    if (!values.allFinite()) throw NumericalError("SPD matrix has non-finite entries");
    if (detail::symmetry_defect(values) > 1e-10) throw NumericalError("SPD matrix is not symmetric");
    values_ = detail::symmetrized(values);
    Eigen::SelfAdjointEigenSolver<Matrix> es(values_, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("SPD check: eigen-solver failed");
    if (!(es.eigenvalues().minCoeff() > 0.0))
      throw NumericalError("matrix is not positive definite (smallest eigenvalue " +
                           std::to_string(es.eigenvalues().minCoeff()) + ")");
  }

  static SpdMatrix identity(Eigen::Index n) { return SpdMatrix(Matrix::Identity(n, n)); }

  const Matrix& values() const { return values_; }
  Eigen::Index dim() const { return values_.rows(); }

 private:
  Matrix values_;
};

/// Length n(n+1)/2 image of an n x n symmetric matrix.
struct TangentVector {
  Vector values;
  Eigen::Index source_dim = 0;
};

namespace detail {

/// U f(diag) U^T for a symmetric input.
template <typename F>
Matrix spectral_map(const Matrix& sym, F&& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("eigen-solver failed");
  const Vector& lambda = es.eigenvalues();
  if (!lambda.allFinite()) throw NumericalError("non-finite eigenvalues");
  Vector mapped(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) mapped[i] = f(lambda[i]);
  if (!mapped.allFinite()) throw NumericalError("matrix function produced non-finite eigenvalues");
  const Matrix& u = es.eigenvectors();
  return symmetrized(u * mapped.asDiagonal() * u.transpose());
}

}  // namespace detail

/// C^p. Positive SPD output for any real p on SPD input; returned as a plain symmetric matrix.
inline Matrix spd_power_matrix(const SpdMatrix& c, double p) {
  return detail::spectral_map(c.values(), [p](double l) { return std::pow(l, p); });
}

inline SpdMatrix spd_power(const SpdMatrix& c, double p) { return SpdMatrix(spd_power_matrix(c, p)); }

inline SymmetricMatrix spd_log(const SpdMatrix& c) {
  return SymmetricMatrix(detail::spectral_map(c.values(), [](double l) {
    if (!(l > 0.0)) throw NumericalError("matrix logarithm of non-positive eigenvalue");
    return std::log(l);
  }));
}

inline SpdMatrix sym_exp(const SymmetricMatrix& s) {
  return SpdMatrix(detail::spectral_map(s.values(), [](double l) { return std::exp(l); }));
}

/// A^{-1/2} B A^{-1/2}, the whitened form of B at A.
inline SpdMatrix whiten(const SpdMatrix& b, const Matrix& a_invsqrt) {
  return SpdMatrix(detail::symmetrized(a_invsqrt * b.values() * a_invsqrt));
}

/// || log(A^{-1/2} B A^{-1/2}) ||_F
inline double affine_invariant_distance(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) throw NumericalError("affine-invariant distance: dimension mismatch");
  // generalized eigenvalues of (B, A) are the eigenvalues of A^{-1/2} B A^{-1/2}
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(b.values(), a.values(), Eigen::EigenvaluesOnly);
  if (ges.info() != Eigen::Success) throw NumericalError("affine-invariant distance: eigen-solver failed");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ges.eigenvalues().size(); ++i) {
    const double l = std::log(ges.eigenvalues()[i]);
    acc += l * l;
  }
  if (!std::isfinite(acc)) throw NumericalError("affine-invariant distance: non-finite result");
  return std::sqrt(acc);
}

struct KarcherOptions {
  double tol = 1e-8;
  int max_iter = 50;
};

struct KarcherResult {
  SpdMatrix mean;
  double residual = 0.0;  // ||mean_i log(M^{-1/2} C_i M^{-1/2})||_F at the returned M
  int iterations = 0;
};

/// Mean tangent direction at M; zero exactly at the Karcher mean.
inline Matrix karcher_gradient(const std::vector<SpdMatrix>& covs, const SpdMatrix& m) {
  const Matrix m_invsqrt = spd_power_matrix(m, -0.5);
  Matrix acc = Matrix::Zero(m.dim(), m.dim());
  for (const auto& c : covs) acc += spd_log(whiten(c, m_invsqrt)).values();
  return acc / static_cast<double>(covs.size());
}

/// Fixed-point iteration M <- M^{1/2} exp(mean_i log(M^{-1/2} C_i M^{-1/2})) M^{1/2}, started
/// at the arithmetic mean.
inline KarcherResult riemannian_mean_detailed(const std::vector<SpdMatrix>& covs, KarcherOptions opts = {}) {
  if (covs.empty()) throw NumericalError("Riemannian mean of an empty set");
  if (!(opts.tol > 0.0)) throw ConfigError("Riemannian mean: tol must be positive");
  const auto n = covs.front().dim();
  Matrix arith = Matrix::Zero(n, n);
  for (const auto& c : covs) {
    if (c.dim() != n) throw NumericalError("Riemannian mean: dimension mismatch");
    arith += c.values();
  }
  SpdMatrix m(arith / static_cast<double>(covs.size()));
  double residual = 0.0;
  for (int it = 0; it <= opts.max_iter; ++it) {
    const Matrix grad = karcher_gradient(covs, m);
    residual = grad.norm();
    if (!std::isfinite(residual)) throw NumericalError("Riemannian mean: non-finite residual");
    if (residual < opts.tol) return {m, residual, it};
    if (it == opts.max_iter) break;
    const Matrix m_sqrt = spd_power_matrix(m, 0.5);
    const Matrix step = sym_exp(SymmetricMatrix(grad)).values();
    m = SpdMatrix(detail::symmetrized(m_sqrt * step * m_sqrt));
  }
  throw NumericalError("Riemannian mean did not converge in " + std::to_string(opts.max_iter) +
                       " iterations (last residual " + std::to_string(residual) + ")");
}

inline SpdMatrix riemannian_mean(const std::vector<SpdMatrix>& covs, double tol = 1e-8, int max_iter = 50) {
  return riemannian_mean_detailed(covs, {tol, max_iter}).mean;
}

enum class TangentVariant {
  paper,     // Cm^{-1/2} log(Cm^{-1/2} C Cm^{-1/2}) Cm^{-1/2}
  standard,  // log(Cm^{-1/2} C Cm^{-1/2})
};

inline const char* to_string(TangentVariant v) { return v == TangentVariant::paper ? "paper" : "standard"; }

/// Tangent map of `c` at the reference point `mean`. Precompute `mean_invsqrt` when mapping many
/// matrices at the same reference.
inline SymmetricMatrix tangent_project(const SpdMatrix& c, const Matrix& mean_invsqrt, TangentVariant variant) {
  if (c.dim() != mean_invsqrt.rows()) throw NumericalError("tangent projection: dimension mismatch");
  const Matrix log_w = spd_log(whiten(c, mean_invsqrt)).values();
  if (variant == TangentVariant::standard) return SymmetricMatrix(log_w);
  return SymmetricMatrix(detail::symmetrized(mean_invsqrt * log_w * mean_invsqrt));
}

inline SymmetricMatrix tangent_project(const SpdMatrix& c, const SpdMatrix& mean, TangentVariant variant) {
  if (c.dim() != mean.dim()) throw NumericalError("tangent projection: dimension mismatch");
  return tangent_project(c, spd_power_matrix(mean, -0.5), variant);
}

/// Upper triangle, row-major, off-diagonal entries scaled by sqrt(2) so that the Euclidean norm of
/// the result equals the Frobenius norm of `s`.
inline TangentVector vectorize_symmetric(const SymmetricMatrix& s) {
  const auto n = s.dim();
  TangentVector out;
  out.source_dim = n;
  out.values.resize(n * (n + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j)
      out.values[k++] = (i == j) ? s.values()(i, j) : std::sqrt(2.0) * s.values()(i, j);
  return out;
}

/// Adds eps I with eps = eps_scale * tr(M)/n when M is not positive definite or its condition
/// number exceeds 1e12.
inline SpdMatrix regularize_spd(const Matrix& m, double eps_scale = 1e-8) {
  if (m.rows() != m.cols() || m.rows() == 0) throw NumericalError("regularize: matrix must be square");
  if (!m.allFinite()) throw NumericalError("regularize: non-finite entries");
  if (detail::symmetry_defect(m) > 1e-10) throw NumericalError("regularize: matrix is not symmetric");
  const Matrix sym = detail::symmetrized(m);
  const double trace = sym.trace();
  if (!(trace > 0.0)) throw NumericalError("regularize: trace must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("regularize: eigen-solver failed");
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo > 0.0 && hi / lo <= 1e12) return SpdMatrix(sym);
  const double eps = eps_scale * trace / static_cast<double>(sym.rows());
  return SpdMatrix(sym + eps * Matrix::Identity(sym.rows(), sym.cols()));
}

}  // namespace mifuse
