#ifndef JETFLOW_LINALG_HPP
#define JETFLOW_LINALG_HPP

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "jetflow/errors.hpp"
#include "jetflow/field.hpp"

namespace jetflow {

struct Tolerances {
  double rank = 1e-9;        // relative singular-value cutoff
  double rank_floor = 1e-13; // absolute cutoff, keeps round-off noise at rank 0
  double residual = 1e-8;
  double projection = 1e-10;
  double subspace = 1e-8;
  double zero_drop = 1e-10;
  double pivot_rcond = 1e-6;
};

using Eigen::MatrixXd;
using Eigen::VectorXd;

int numeric_rank(const MatrixXd& A, const Tolerances& tol = {});
MatrixXd null_space(const MatrixXd& A, const Tolerances& tol = {});        // orthonormal columns
MatrixXd range_basis(const MatrixXd& A, const Tolerances& tol = {});       // orthonormal columns
MatrixXd left_null_space(const MatrixXd& A, const Tolerances& tol = {});   // columns u with u^T A = 0
double reciprocal_condition(const MatrixXd& A);

// Residual of projecting the columns of `inner` onto span(outer), relative to their size.
double containment_residual(const MatrixXd& outer, const MatrixXd& inner, const Tolerances& tol = {});
bool subspace_contains(const MatrixXd& outer, const MatrixXd& inner, const Tolerances& tol = {});
bool subspace_equal(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol = {});
MatrixXd subspace_sum(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol = {});
MatrixXd subspace_intersection(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol = {});

// Pivot rows/columns of a rank-r submatrix, chosen once and then frozen.
struct PivotSet {
  std::vector<int> rows;
  std::vector<int> cols;
  int rank = 0;
  int n_rows = 0;
  int n_cols = 0;
  double rcond = 1.0;

  std::vector<int> free_cols() const;
  std::vector<int> free_rows() const;
};

PivotSet choose_pivots(const MatrixXd& A, const Tolerances& tol = {});
double pivot_rcond(const MatrixXd& A, const PivotSet& piv);

// Generic dense solve with partial pivoting on primal magnitudes.
struct SingularMatrix : JetflowError {
  SingularMatrix() : JetflowError("singular matrix in generic solve") {}
};

template <class S> Mat<S> lu_solve(Mat<S> A, Mat<S> B) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) throw JetflowError("lu_solve: dimension mismatch");
  double scale = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::fabs(primal(A(i, j))));
  if (n == 0) return B;
  if (scale == 0.0) throw SingularMatrix();
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index p = k;
    double best = std::fabs(primal(A(k, k)));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      double v = std::fabs(primal(A(i, k)));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best <= 1e-14 * scale) throw SingularMatrix();
    if (p != k) {
      A.row(k).swap(A.row(p));
      B.row(k).swap(B.row(p));
    }
    for (Eigen::Index i = k + 1; i < n; ++i) {
      S f = A(i, k) / A(k, k);
      if (primal(f) == 0.0 && f == S(0.0)) continue;
      for (Eigen::Index j = k; j < n; ++j) A(i, j) -= f * A(k, j);
      for (Eigen::Index j = 0; j < B.cols(); ++j) B(i, j) -= f * B(k, j);
    }
  }
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      S acc = B(k, j);
      for (Eigen::Index i = k + 1; i < n; ++i) acc -= A(k, i) * B(i, j);
      B(k, j) = acc / A(k, k);
    }
  }
  return B;
}

template <class S> Vec<S> lu_solve(const Mat<S>& A, const Vec<S>& b) {
  Mat<S> B = b;
  return lu_solve<S>(A, B).col(0);
}

template <class S> Mat<S> lu_inverse(const Mat<S>& A) {
  return lu_solve<S>(A, Mat<S>(Mat<S>::Identity(A.rows(), A.cols())));
}

template <class S> Mat<S> select(const Mat<S>& A, const std::vector<int>& rows, const std::vector<int>& cols) {
  Mat<S> R(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < rows.size(); ++i) R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = A(rows[i], cols[j]);
  return R;
}

// Null-space basis with frozen pivots: for each free column k, z[k] = 1 and
// z[pivots] = -A_RP^{-1} A_Rk. Smooth in the entries of A while A_RP stays regular.
template <class S> Mat<S> frozen_null(const Mat<S>& A, const PivotSet& piv) {
  std::vector<int> free = piv.free_cols();
  const Eigen::Index k = A.cols();
  Mat<S> Z = Mat<S>::Zero(k, static_cast<Eigen::Index>(free.size()));
  if (free.empty()) return Z;
  Mat<S> rhs = select(A, piv.rows, free);
  Mat<S> sol;
  if (piv.rank > 0) sol = lu_solve<S>(select(A, piv.rows, piv.cols), rhs);
  for (std::size_t f = 0; f < free.size(); ++f) {
    Eigen::Index c = static_cast<Eigen::Index>(f);
    Z(free[f], c) = S(1.0);
    for (int i = 0; i < piv.rank; ++i) Z(piv.cols[static_cast<std::size_t>(i)], c) = -sol(i, c);
  }
  return Z;
}

// Particular solution of A x = b on the pivot block; free entries zero.
template <class S> Vec<S> frozen_solve(const Mat<S>& A, const Vec<S>& b, const PivotSet& piv) {
  Vec<S> x = Vec<S>::Zero(A.cols());
  if (piv.rank == 0) return x;
  Vec<S> rb(piv.rank);
  for (int i = 0; i < piv.rank; ++i) rb[i] = b[piv.rows[static_cast<std::size_t>(i)]];
  Vec<S> xp = lu_solve<S>(select(A, piv.rows, piv.cols), rb);
  for (int i = 0; i < piv.rank; ++i) x[piv.cols[static_cast<std::size_t>(i)]] = xp[i];
  return x;
}

// Left null vectors (columns) of A with frozen pivots computed on A^T.
template <class S> Mat<S> frozen_left_null(const Mat<S>& A, const PivotSet& piv_transposed) {
  Mat<S> At = A.transpose();
  return frozen_null<S>(At, piv_transposed);
}

// Antisymmetric part, used wherever a 2-form is stored as a matrix.
template <class S> Mat<S> antisym(const Mat<S>& A) { return (A - A.transpose()) * 0.5; }

// alpha ^ beta as a matrix: a b^T - b a^T
template <class S> Mat<S> wedge(const Vec<S>& a, const Vec<S>& b) {
  return a * b.transpose() - b * a.transpose();
}

}  // namespace jetflow

#endif
