#include "nekfac/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace nekfac {

bool all_finite(const Mat& m) { return m.allFinite(); }

void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) {
    throw std::runtime_error(what + ": non-finite entries");
  }
}

Mat SymEig::apply(const Vec& transformed_eigvals) const {
  if (transformed_eigvals.size() != eigvals.size()) {
    throw std::invalid_argument("SymEig::apply: eigenvalue count mismatch");
  }
  return basis * transformed_eigvals.asDiagonal() * basis.transpose();
}

Mat SymEig::inverse() const { return apply(eigvals.cwiseInverse()); }

Mat SymEig::sqrt() const { return apply(eigvals.cwiseSqrt()); }

Mat SymEig::inverse_sqrt() const {
  return apply(eigvals.cwiseSqrt().cwiseInverse());
}

double SymEig::log_det() const { return eigvals.array().log().sum(); }

Vec vec(const Mat& m) {
  return Eigen::Map<const Vec>(m.data(), m.size());
}

Mat unvec(const Vec& v, Index rows, Index cols) {
  if (v.size() != rows * cols) {
    throw std::invalid_argument(
        "unvec: vector length " + std::to_string(v.size()) +
        " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

Vec kron_matvec(const Mat& col_op, const Mat& row_op, const Vec& x) {
  const Index n = row_op.rows();
  const Index p = col_op.rows();
  if (row_op.cols() != n || col_op.cols() != p) {
    throw std::invalid_argument("kron_matvec: operators must be square");
  }
  if (x.size() != n * p) {
    throw std::invalid_argument("kron_matvec: vector length mismatch");
  }
  const Mat xm = unvec(x, n, p);
  return vec(row_op * xm * col_op.transpose());
}

Mat kron_dense(const Mat& left, const Mat& right) {
  const Index rows = left.rows() * right.rows();
  const Index cols = left.cols() * right.cols();
  if (rows > kDenseGuard || cols > kDenseGuard) {
    throw std::invalid_argument("kron_dense: result exceeds dense size guard");
  }
  Mat out(rows, cols);
  for (Index i = 0; i < left.rows(); ++i) {
    for (Index j = 0; j < left.cols(); ++j) {
      out.block(i * right.rows(), j * right.cols(), right.rows(),
                right.cols()) = left(i, j) * right;
    }
  }
  return out;
}

SymEig sym_eig(const Mat& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("sym_eig: matrix must be square");
  }
  require_finite(m, "sym_eig input");
  const Mat sym = 0.5 * (m + m.transpose());

  Eigen::SelfAdjointEigenSolver<Mat> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("sym_eig: eigensolver failed to converge");
  }

  const Index d = sym.rows();
  const Vec& raw_vals = solver.eigenvalues();  // ascending
  const Mat& raw_vecs = solver.eigenvectors();

  // Reorder to descending; stable sort keeps solver order on ties.
  std::vector<Index> order(static_cast<size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return raw_vals[a] > raw_vals[b];
  });

  SymEig out;
  out.basis.resize(d, d);
  out.eigvals.resize(d);
  for (Index k = 0; k < d; ++k) {
    const Index src = order[static_cast<size_t>(k)];
    Vec col = raw_vecs.col(src);
    // Deterministic sign: largest-magnitude entry positive.
    Index peak = 0;
    col.cwiseAbs().maxCoeff(&peak);
    if (col[peak] < 0.0) col = -col;
    out.basis.col(k) = col;
    out.eigvals[k] = std::max(raw_vals[src], kEigClampFloor);
  }
  return out;
}

Mat project_to_eigenbasis(const Mat& q_row, const Mat& q_col, const Mat& v) {
  if (q_row.rows() != v.rows() || q_col.rows() != v.cols()) {
    throw std::invalid_argument("project_to_eigenbasis: dimension mismatch");
  }
  return q_row.transpose() * v * q_col;
}

Mat project_from_eigenbasis(const Mat& q_row, const Mat& q_col, const Mat& v) {
  if (q_row.cols() != v.rows() || q_col.cols() != v.cols()) {
    throw std::invalid_argument("project_from_eigenbasis: dimension mismatch");
  }
  return q_row * v * q_col.transpose();
}

}  // namespace nekfac
