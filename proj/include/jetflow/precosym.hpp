#ifndef JETFLOW_PRECOSYM_HPP
#define JETFLOW_PRECOSYM_HPP

#include <optional>

#include "jetflow/linalg.hpp"

namespace jetflow {

// Pointwise (pre)cosymplectic data: eta a covector, omega a 2-form matrix,
// optionally a vector R with i(R)omega = 0, eta(R) = 1.
template <class S>
struct PrecoPoint {
  Vec<S> eta;
  Mat<S> omega;
  std::optional<Vec<S>> R;

  int dim() const { return static_cast<int>(eta.size()); }
};

template <class S>
PrecoPoint<S> make_preco(const Vec<S>& eta, const Mat<S>& omega, std::optional<Vec<S>> R = std::nullopt) {
  if (omega.rows() != eta.size() || omega.cols() != eta.size())
    throw JetflowError("precosymplectic point: dimension mismatch");
  return PrecoPoint<S>{eta, antisym<S>(omega), std::move(R)};
}

// Matrix of the flat map: flat(v) = omega^T v + eta(v) eta.
template <class S> Mat<S> flat_matrix(const PrecoPoint<S>& p) {
  return Mat<S>(p.omega.transpose()) + p.eta * p.eta.transpose();
}

template <class S> Vec<S> flat_map(const PrecoPoint<S>& p, const Vec<S>& v) {
  if (v.size() != p.eta.size()) throw JetflowError("flat_map: dimension mismatch");
  return flat_matrix(p) * v;
}

bool is_cosymplectic(const PrecoPoint<double>& p, const Tolerances& tol = {});

template <class S> void require_cosymplectic(const PrecoPoint<S>& p, const Tolerances& tol) {
  PrecoPoint<double> q{primal(p.eta), primal(p.omega), std::nullopt};
  if (!is_cosymplectic(q, tol)) throw AssumptionFailure("NotCosymplectic", "flat map is not invertible");
}

template <class S> Vec<S> reeb(const PrecoPoint<S>& p, const Tolerances& tol = {}) {
  require_cosymplectic(p, tol);
  return lu_solve<S>(flat_matrix(p), Vec<S>(p.eta));
}

// flat(sharp(alpha)) = alpha - alpha(R) eta
template <class S> Vec<S> poisson_sharp(const PrecoPoint<S>& p, const Vec<S>& alpha, const Tolerances& tol = {}) {
  require_cosymplectic(p, tol);
  Mat<S> F = flat_matrix(p);
  Vec<S> R = p.R ? *p.R : lu_solve<S>(F, Vec<S>(p.eta));
  S aR = alpha.dot(R);
  return lu_solve<S>(F, Vec<S>(alpha - aR * p.eta));
}

template <class S>
struct HamiltonianPair {
  Vec<S> X;  // Hamiltonian vector field value
  Vec<S> E;  // evolution vector: R + X
};

template <class S>
HamiltonianPair<S> hamiltonian_and_evolution(const PrecoPoint<S>& p, const Vec<S>& dF, const Tolerances& tol = {}) {
  Vec<S> R = p.R ? *p.R : reeb(p, tol);
  Vec<S> X = poisson_sharp(PrecoPoint<S>{p.eta, p.omega, R}, dF, tol);
  return {X, Vec<S>(R + X)};
}

// K-perp = annihilator of flat(K); K given by basis columns.
MatrixXd orthogonal_complement(const PrecoPoint<double>& p, const MatrixXd& K, const Tolerances& tol = {});

// ker omega ∩ ker eta
MatrixXd characteristic_space(const PrecoPoint<double>& p, const Tolerances& tol = {});

struct SplitProjectors {
  MatrixXd P;  // onto D along sharp(D^0)
  MatrixXd Q;  // onto sharp(D^0) along D
};

SplitProjectors dirac_split(const PrecoPoint<double>& p, const MatrixXd& D, const Tolerances& tol = {});

}  // namespace jetflow

#endif
