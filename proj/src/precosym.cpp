#include "jetflow/precosym.hpp"

#include <Eigen/LU>

namespace jetflow {

bool is_cosymplectic(const PrecoPoint<double>& p, const Tolerances& tol) {
  return numeric_rank(flat_matrix(p), tol) == p.dim();
}

MatrixXd orthogonal_complement(const PrecoPoint<double>& p, const MatrixXd& K, const Tolerances& tol) {
  const int d = p.dim();
  if (K.rows() != d) throw JetflowError("orthogonal_complement: dimension mismatch");
  MatrixXd Kb = range_basis(K, tol);
  if (Kb.cols() == 0) return MatrixXd::Identity(d, d);
  // rows are the covectors flat(k)
  MatrixXd F = (flat_matrix(p) * Kb).transpose();
  return null_space(F, tol);
}

MatrixXd characteristic_space(const PrecoPoint<double>& p, const Tolerances& tol) {
  MatrixXd M(p.dim() + 1, p.dim());
  M << p.omega.transpose(), p.eta.transpose();
  return null_space(M, tol);
}

SplitProjectors dirac_split(const PrecoPoint<double>& p, const MatrixXd& D, const Tolerances& tol) {
  const int d = p.dim();
  MatrixXd Db = range_basis(D, tol);
  MatrixXd ann = null_space(Db.transpose(), tol);  // covectors vanishing on D
  MatrixXd sharp(d, ann.cols());
  for (Eigen::Index j = 0; j < ann.cols(); ++j) sharp.col(j) = poisson_sharp<double>(p, ann.col(j), tol);
  MatrixXd M(d, Db.cols() + sharp.cols());
  M << Db, sharp;
  if (M.cols() != d || numeric_rank(M, tol) < d)
    throw AssumptionFailure("SplitFails", "D and sharp(D^0) do not span the tangent space");
  MatrixXd Minv = M.inverse();
  MatrixXd sel = MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < Db.cols(); ++i) sel(i, i) = 1.0;
  SplitProjectors out;
  out.P = M * sel * Minv;
  out.Q = MatrixXd::Identity(d, d) - out.P;
  return out;
}

}  // namespace jetflow
