#ifndef JETFLOW_SODE_ANALYSIS_HPP
#define JETFLOW_SODE_ANALYSIS_HPP

#include <optional>
#include <string>
#include <vector>

#include "jetflow/constraint_engine.hpp"
#include "jetflow/jet_geometry.hpp"

namespace jetflow {

// [A, B] = DB A - DA B, derivatives by dual numbers.
VectorField lie_bracket(const VectorField& A, const VectorField& B);

// Column j of the frozen ker FL_* basis as a field.
VectorField ker_fl_vector(const LagrangianSystem& sys, int j);

struct Projectability {
  bool projectable = true;
  double defect = 0.0;  // max_j |W_j(f)| on the samples
};

// Fiberwise constancy on the zero set: W_j(f) <= tol at the given zero-set samples.
Projectability projectability_test(const ScalarField& f, const LagrangianSystem& sys,
                                   const std::vector<VectorXd>& zero_set_samples, double tol = 1e-8);

struct SodeSubmanifold {
  std::vector<Constraint> constraints;  // A^N - v^N for each non-pivot velocity N
  std::vector<Constraint> stack;        // final dynamical constraints followed by the above
  std::vector<VectorXd> samples;
  VectorField X_f;
  VectorField X_LS;          // X_f + X_f(xi_j) W_j
  VectorField X_LS_opposite;  // X_f - X_f(xi_j) W_j
  double fiber_defect = 0.0;            // max |W_j(X_f^{t,q})| on the final samples
  double dxi_W_residual = 0.0;          // max |dxi_j(W_i) + delta_ij|
  double sode_residual = 0.0;           // max |J(X_LS)| on S
  double eta_residual = 0.0;            // max |dt(X_LS) - 1| on S
  double tangency_residual = 0.0;       // max |d chi(X_LS)| on S over the stack
  double opposite_sign_tangency_defect = 0.0;
  std::vector<std::string> notes;
};

// Requires a final dynamical report with a particular solution.
SodeSubmanifold sode_submanifold(const LagrangianSystem& sys, const AlgorithmReport& lag, const RunOptions& opt = {});

enum class ConstraintKind { Dynamical, Sode };
const char* to_string(ConstraintKind k);

struct TaggedConstraint {
  Constraint constraint;
  ConstraintKind kind = ConstraintKind::Dynamical;
  Projectability projectability;
};

struct ElLevel {
  int index = 0;
  std::vector<Constraint> constraints;           // cumulative
  std::vector<TaggedConstraint> new_constraints;
  std::vector<VectorXd> samples;
  int rank = 0;  // rank of the cumulative Jacobian
  int system_rank = 0;
  double max_residual = 0.0;
  std::vector<std::string> notes;
};

struct ElReport {
  std::vector<ElLevel> levels;
  Termination status = Termination::Final;
  int final_level = 0;
  std::optional<DynamicsSolution> dynamics;  // X = D + vertical part, gauge vertical
  bool unique = false;
  std::vector<CrossCheck> checks;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;

  const ElLevel& final() const { return levels.at(static_cast<std::size_t>(final_level)); }
};

// Constraint algorithm for second-order solutions X = D + V, V vertical, i(X) Omega_L = 0,
// tangent to the current stack. D is the default second-order connection.
// With a dynamical report, constraints vanishing on its final samples are tagged Dynamical.
ElReport euler_lagrange_algorithm(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorXd& seed,
                                  const RunOptions& opt = {}, const AlgorithmReport* dynamical = nullptr);

// d/dt(dL/dv) - dL/dq along a second-order field: X(L_v) - L_q at a point.
VectorXd el_residual(const LagrangianSystem& sys, const VectorField& X, const VectorXd& x);

std::vector<VectorXd> integrate_rk4(const VectorField& X, const VectorXd& x0, double horizon, double step);

// Central-difference Euler-Lagrange residual along a trajectory with uniform step.
double trajectory_el_residual(const LagrangianSystem& sys, const std::vector<VectorXd>& traj, double step);

}  // namespace jetflow

#endif
