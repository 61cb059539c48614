#ifndef JETFLOW_JET_GEOMETRY_HPP
#define JETFLOW_JET_GEOMETRY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "jetflow/expr.hpp"
#include "jetflow/linalg.hpp"

namespace jetflow {

enum class Regularity { Regular, Singular };

// Chart slots on J1E: t = 0, q_i = 1 + i, v_i = 1 + n + i (0-based i).
struct LagrangianSystem {
  int n = 0;
  SymbolTable table;
  Expr L;
  std::vector<Expr> Lv;                   // dL/dv_r
  std::vector<Expr> Lq;                   // dL/dq_r
  std::vector<std::vector<Expr>> hess;    // d2L/dv_r dv_s
  std::vector<std::vector<Expr>> mixed_q; // [r][s] = d2L/dq_s dv_r
  std::vector<Expr> mixed_t;              // d2L/dt dv_r
  Expr energy;                            // v.Lv - L
  Regularity regularity = Regularity::Regular;
  int corank = 0;
  std::vector<int> pivots;     // velocity indices of a regular Hessian block
  std::vector<int> nonpivots;  // the remaining m velocity indices
  double pivot_rcond = 1.0;
  bool hessian_velocity_free = false;

  int dim() const { return 2 * n + 1; }
  int t_slot() const { return 0; }
  int q_slot(int i) const { return 1 + i; }
  int v_slot(int i) const { return 1 + n + i; }
};

LagrangianSystem make_system(int n, const std::string& lagrangian, const VectorXd& seed,
                             const Tolerances& tol = {}, std::uint64_t rng_seed = 1);
LagrangianSystem make_system(int n, const Expr& lagrangian, const VectorXd& seed,
                             const Tolerances& tol = {}, std::uint64_t rng_seed = 1);

template <class S> Mat<S> hessian_at(const LagrangianSystem& sys, const Vec<S>& x) {
  Mat<S> H(sys.n, sys.n);
  for (int r = 0; r < sys.n; ++r)
    for (int s = 0; s < sys.n; ++s) H(r, s) = eval(sys.hess[r][s], x);
  return H;
}

template <class S> Vec<S> momenta_at(const LagrangianSystem& sys, const Vec<S>& x) {
  Vec<S> p(sys.n);
  for (int r = 0; r < sys.n; ++r) p[r] = eval(sys.Lv[r], x);
  return p;
}

struct LagrangianForms {
  VectorField theta;   // Poincare-Cartan 1-form
  MatrixField Omega;   // Poincare-Cartan 2-form
  VectorField eta;     // dt
  ScalarField energy;
  std::vector<std::vector<Expr>> omega_entries;  // symbolic matrix of Omega
};

LagrangianForms build_forms(const LagrangianSystem& sys);

// Coefficient of dt^dq1..dqn^dv1..dvn in eta ^ Omega^n.
double volume_coefficient(const LagrangianForms& forms, int n, const VectorXd& x);
double pfaffian(const MatrixXd& A);

// (J X)^{v_r} = X^{q_r} - v_r X^t ; other slots zero.
template <class S> Vec<S> canonical_endomorphism(int n, const Vec<S>& x, const Vec<S>& X) {
  Vec<S> out = Vec<S>::Zero(2 * n + 1);
  for (int r = 0; r < n; ++r) out[1 + n + r] = X[1 + r] - x[1 + n + r] * X[0];
  return out;
}

VectorField canonical_endomorphism(int n, const VectorField& X);

bool is_sode(int n, const VectorField& X, const std::vector<VectorXd>& pts, double tol = 1e-9);

// Default second-order connection d/dt + v d/dq.
VectorField default_sode_connection(int n);

// Legendre map J1E -> J1*E: (t, q, dL/dv).
VectorField legendre_map(const LagrangianSystem& sys);
// Extended map J1E -> T*E: additionally p = L - v.dL/dv in the last slot.
VectorField legendre_map_extended(const LagrangianSystem& sys);

// Columns W_j = d/dv_{N_j} + sum_{P} W_j^i d/dv_i spanning ker FL_*, frozen pivots of sys.
template <class S> Mat<S> ker_fl_matrix(const LagrangianSystem& sys, const Vec<S>& x) {
  const int m = static_cast<int>(sys.nonpivots.size());
  Mat<S> W = Mat<S>::Zero(sys.dim(), m);
  if (m == 0) return W;
  Mat<S> H = hessian_at(sys, x);
  const int r = static_cast<int>(sys.pivots.size());
  Mat<S> coeff;
  if (r > 0) {
    Mat<S> HPP = select(H, sys.pivots, sys.pivots);
    Mat<S> HPN = select(H, sys.pivots, sys.nonpivots);
    coeff = lu_solve<S>(HPP, HPN);
  }
  for (int j = 0; j < m; ++j) {
    W(sys.v_slot(sys.nonpivots[static_cast<std::size_t>(j)]), j) = S(1.0);
    for (int i = 0; i < r; ++i) W(sys.v_slot(sys.pivots[static_cast<std::size_t>(i)]), j) = -coeff(i, j);
  }
  return W;
}

// Connection on E given by d/dt + Y^i(t, q) d/dq_i; components are expressions over (t, q).
struct BaseConnection {
  int n = 0;
  std::vector<Expr> Y;

  static BaseConnection trivial(int n);
  static BaseConnection from_strings(int n, const std::vector<std::string>& components);
  bool is_trivial() const;
};

// d/dt + Y^i d/dq_i on any chart whose leading slots are (t, q).
VectorField lift_connection(const BaseConnection& c, int dim);

std::vector<VectorXd> ker_fl_basis(const LagrangianSystem& sys, const VectorXd& x, const Tolerances& tol = {});
MatrixField ker_fl_field(const LagrangianSystem& sys);

}  // namespace jetflow

#endif
