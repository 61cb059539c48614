#include "jetflow/linalg.hpp"

#include <algorithm>

#include <Eigen/QR>
#include <Eigen/SVD>

namespace jetflow {

static int rank_from_singular(const VectorXd& s, const Tolerances& tol) {
  if (s.size() == 0) return 0;
  double cut = std::max(tol.rank * s[0], tol.rank_floor);
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > cut) ++r;
  return r;
}

int numeric_rank(const MatrixXd& A, const Tolerances& tol) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(A);
  return rank_from_singular(svd.singularValues(), tol);
}

MatrixXd null_space(const MatrixXd& A, const Tolerances& tol) {
  const Eigen::Index n = A.cols();
  if (A.rows() == 0) return MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullV);
  int r = rank_from_singular(svd.singularValues(), tol);
  return svd.matrixV().rightCols(n - r);
}

MatrixXd range_basis(const MatrixXd& A, const Tolerances& tol) {
  if (A.cols() == 0) return MatrixXd(A.rows(), 0);
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullU);
  int r = rank_from_singular(svd.singularValues(), tol);
  return svd.matrixU().leftCols(r);
}

MatrixXd left_null_space(const MatrixXd& A, const Tolerances& tol) {
  return null_space(A.transpose(), tol);
}

double reciprocal_condition(const MatrixXd& A) {
  if (A.size() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(A);
  const VectorXd& s = svd.singularValues();
  if (s[0] == 0.0) return 0.0;
  return s[s.size() - 1] / s[0];
}

double containment_residual(const MatrixXd& outer, const MatrixXd& inner, const Tolerances& tol) {
  if (inner.cols() == 0) return 0.0;
  MatrixXd Q = range_basis(outer, tol);
  MatrixXd I = range_basis(inner, tol);
  if (I.cols() == 0) return 0.0;
  MatrixXd res = I - Q * (Q.transpose() * I);
  return res.norm();
}

bool subspace_contains(const MatrixXd& outer, const MatrixXd& inner, const Tolerances& tol) {
  return containment_residual(outer, inner, tol) <= tol.subspace;
}

bool subspace_equal(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol) {
  return subspace_contains(a, b, tol) && subspace_contains(b, a, tol);
}

MatrixXd subspace_sum(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol) {
  MatrixXd ab(a.rows(), a.cols() + b.cols());
  ab << a, b;
  return range_basis(ab, tol);
}

MatrixXd subspace_intersection(const MatrixXd& a, const MatrixXd& b, const Tolerances& tol) {
  MatrixXd A = range_basis(a, tol), B = range_basis(b, tol);
  if (A.cols() == 0 || B.cols() == 0) return MatrixXd(a.rows(), 0);
  MatrixXd M(A.rows(), A.cols() + B.cols());
  M << A, -B;
  MatrixXd N = null_space(M, tol);
  return range_basis(A * N.topRows(A.cols()), tol);
}

std::vector<int> PivotSet::free_cols() const {
  std::vector<int> out;
  for (int c = 0; c < n_cols; ++c)
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) out.push_back(c);
  return out;
}

std::vector<int> PivotSet::free_rows() const {
  std::vector<int> out;
  for (int r = 0; r < n_rows; ++r)
    if (std::find(rows.begin(), rows.end(), r) == rows.end()) out.push_back(r);
  return out;
}

PivotSet choose_pivots(const MatrixXd& A, const Tolerances& tol) {
  PivotSet p;
  p.n_rows = static_cast<int>(A.rows());
  p.n_cols = static_cast<int>(A.cols());
  p.rank = numeric_rank(A, tol);
  if (p.rank == 0) return p;
  Eigen::ColPivHouseholderQR<MatrixXd> qc(A);
  for (int i = 0; i < p.rank; ++i) p.cols.push_back(qc.colsPermutation().indices()[i]);
  std::sort(p.cols.begin(), p.cols.end());
  MatrixXd sub(A.rows(), p.rank);
  for (int j = 0; j < p.rank; ++j) sub.col(j) = A.col(p.cols[static_cast<std::size_t>(j)]);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(sub.transpose());
  for (int i = 0; i < p.rank; ++i) p.rows.push_back(qr.colsPermutation().indices()[i]);
  std::sort(p.rows.begin(), p.rows.end());
  p.rcond = pivot_rcond(A, p);
  return p;
}

double pivot_rcond(const MatrixXd& A, const PivotSet& piv) {
  if (piv.rank == 0) return 1.0;
  return reciprocal_condition(select<double>(A, piv.rows, piv.cols));
}

}  // namespace jetflow
