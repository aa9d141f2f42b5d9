#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace nekfac {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

// Floor applied to eigenvalues of estimated covariance factors. Keeps them
// strictly positive so inverse / sqrt / log-det stay well defined.
inline constexpr double kEigClampFloor = 1e-10;

// Dense materialization guard: refuse Kronecker products above this dimension.
inline constexpr Index kDenseGuard = 2000;

/// Eigendecomposition of a symmetric PSD matrix. Eigenvalues are sorted
/// descending (ties keep solver order) and clamped to kEigClampFloor from
/// below. Each basis column has its largest-magnitude entry made positive,
/// so the decomposition is deterministic.
struct SymEig {
  Mat basis;    // d x d, orthogonal, columns are eigenvectors
  Vec eigvals;  // length d, descending, >= kEigClampFloor

  Index dim() const { return eigvals.size(); }

  // Q f(L) Q^T for an entrywise function of the eigenvalues.
  Mat apply(const Vec& transformed_eigvals) const;

  Mat inverse() const;
  Mat sqrt() const;
  Mat inverse_sqrt() const;
  double log_det() const;
  double trace() const { return eigvals.sum(); }
};

bool all_finite(const Mat& m);
void require_finite(const Mat& m, const std::string& what);

// --------------------------------------------------------------------------
// vec / unvec (column stacking: vec(M)[i + j*rows] = M(i, j))
// --------------------------------------------------------------------------

Vec vec(const Mat& m);
Mat unvec(const Vec& v, Index rows, Index cols);

// --------------------------------------------------------------------------
// Kronecker products
// --------------------------------------------------------------------------

// (col_op (x) row_op) x computed as vec(row_op * unvec(x) * col_op^T)
// without forming the Kronecker product. row_op acts on the row index of
// the unvec'd matrix, col_op on the column index.
Vec kron_matvec(const Mat& col_op, const Mat& row_op, const Vec& x);

// Materialized left (x) right. Guarded, intended for oracles and small
// covariance dumps only.
Mat kron_dense(const Mat& left, const Mat& right);

// --------------------------------------------------------------------------
// Symmetric eigendecomposition
// --------------------------------------------------------------------------

// Symmetrizes the input as (M + M^T)/2 first. Throws on non-finite input.
SymEig sym_eig(const Mat& m);

// Q_row^T V Q_col, i.e. unvec((Q_col (x) Q_row)^T vec(V)).
Mat project_to_eigenbasis(const Mat& q_row, const Mat& q_col, const Mat& v);

// Q_row V Q_col^T, the inverse rotation of project_to_eigenbasis.
Mat project_from_eigenbasis(const Mat& q_row, const Mat& q_col, const Mat& v);

}  // namespace nekfac
