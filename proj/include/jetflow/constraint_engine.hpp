#ifndef JETFLOW_CONSTRAINT_ENGINE_HPP
#define JETFLOW_CONSTRAINT_ENGINE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jetflow/precosym.hpp"

namespace jetflow {

struct RunOptions {
  Tolerances tol;
  std::uint64_t rng_seed = 12345;
  int samples = 20;
  double sample_sigma = 0.1;
  int zero_test_points = 100;
  double zero_test_sigma = 1.0;
  int max_iter = -1;  // -1: problem dimension
  bool cross_checks = true;
};

struct GeometricProblem {
  int dim = 0;
  MatrixField Omega;
  VectorField eta;
  VectorField Y;
  VectorField gamma;   // i(Y) Omega
  MatrixField omega;   // Omega - eta ^ gamma
  VectorXd seed;
  std::vector<std::string> coords;
};

struct SplitForms {
  VectorField gamma;
  MatrixField omega;
};

SplitForms split_forms(const MatrixField& Omega, const VectorField& eta, const VectorField& Y);

GeometricProblem make_problem(int dim, MatrixField Omega, VectorField eta, VectorField Y, VectorXd seed,
                              std::vector<std::string> coords = {});

// Throws ConnectionNotNormalized when eta(Y) != 1 or i(Y) omega != 0 at a point.
void check_connection(const GeometricProblem& p, const std::vector<VectorXd>& pts, double tol = 1e-10);

template <class S> PrecoPoint<S> preco_at(const GeometricProblem& p, const Vec<S>& x) {
  return PrecoPoint<S>{Vec<S>(p.eta(x)), antisym<S>(Mat<S>(p.omega(x))), Vec<S>(p.Y(x))};
}

// eta - gamma
template <class S> Vec<S> rhs_at(const GeometricProblem& p, const Vec<S>& x) {
  return Vec<S>(p.eta(x)) - Vec<S>(p.gamma(x));
}

struct PointSolution {
  bool solvable = false;
  VectorXd X;
  MatrixXd nullspace;  // ker Omega ∩ ker eta
  double residual = 0.0;
};

PointSolution solve_pointwise(const GeometricProblem& p, const VectorXd& x, const Tolerances& tol = {});

struct Constraint {
  ScalarField f;
  std::string description;
  int generation = 0;
};

std::vector<ScalarField> fields_of(const std::vector<Constraint>& cs);

struct ConstraintLevel {
  int index = 0;
  std::vector<Constraint> constraints;      // cumulative
  std::vector<Constraint> new_constraints;  // added at this generation
  std::vector<VectorXd> samples;            // samples[0] is the level seed
  MatrixField perp_basis;                   // frozen-pivot basis of T C_i-perp (columns)
  std::vector<ScalarField> candidates;      // i(Z_j)(eta - gamma) for every column Z_j
  int perp_rank = 0;
  int tangent_perp_rank = 0;                // dim (T C_i-perp ∩ T C_i)
  int rank = 0;                             // rank of the cumulative Jacobian
  double max_residual = 0.0;
  int dropped_identically_zero = 0;
  int dropped_on_level = 0;
  std::vector<std::string> notes;
};

struct DynamicsSolution {
  VectorField X_part;
  MatrixField gauge_basis;   // columns spanning the undetermined part
  int gauge_dim = 0;
  VectorXd X_at_seed;
  MatrixXd gauge_at_seed;
  double max_equation_residual = 0.0;
  double max_tangency_drift = 0.0;
  std::vector<std::string> notes;
};

enum class Termination { Empty, ZeroDimensional, Final, MaxIterExceeded };
const char* to_string(Termination t);

struct CrossCheck {
  std::string name;
  bool passed = true;
  double value = 0.0;
  std::string detail;
};

struct AlgorithmReport {
  std::vector<ConstraintLevel> levels;
  Termination status = Termination::Final;
  int final_level = 0;
  std::optional<DynamicsSolution> dynamics;
  std::vector<CrossCheck> checks;
  std::vector<std::string> warnings;  // assumption failures reported without aborting
  std::vector<std::string> notes;

  const ConstraintLevel& final() const { return levels.at(static_cast<std::size_t>(final_level)); }
  std::vector<Constraint> final_constraints() const { return final().constraints; }
};

// ---- shared tower machinery (also used by the Euler-Lagrange tower)

struct ProjectionResult {
  bool converged = false;
  VectorXd x;
  double residual = 0.0;
  int iterations = 0;
};

// Gauss-Newton with minimum-norm steps and halving line search.
ProjectionResult project_point(const std::vector<ScalarField>& cs, const VectorXd& x0, const Tolerances& tol,
                               int max_iter = 50);

struct SampleSet {
  bool ok = false;
  std::vector<VectorXd> points;
  int failures = 0;
};

SampleSet sample_level(const std::vector<ScalarField>& cs, const VectorXd& seed, std::uint64_t rng_seed,
                       const RunOptions& opt);

bool identically_zero(const ScalarField& f, const VectorXd& center, std::uint64_t rng_seed, const RunOptions& opt);

double max_abs_on(const ScalarField& f, const std::vector<VectorXd>& pts);

// Full-row-rank check of the cumulative Jacobian at every sample.
void require_full_rank(const std::vector<ScalarField>& cs, const std::vector<VectorXd>& pts, const Tolerances& tol,
                       const std::string& where);

struct Extension {
  bool empty = false;
  std::vector<Constraint> added;
  SampleSet samples;
  int dropped_zero = 0;
  int dropped_on_level = 0;
  std::vector<std::string> notes;
};

// Adds the independent, non-trivial candidates to the stack and samples the new level.
Extension extend_stack(const std::vector<Constraint>& stack, const std::vector<Constraint>& candidates,
                       const std::vector<VectorXd>& level_samples, std::uint64_t rng_seed, const RunOptions& opt);

std::string describe_vector(const VectorXd& v);

// ---- the algorithm

ConstraintLevel level_zero(const GeometricProblem& p, const RunOptions& opt);
ConstraintLevel first_generation(const GeometricProblem& p, const RunOptions& opt);
ConstraintLevel next_generation(const GeometricProblem& p, const ConstraintLevel& level, const RunOptions& opt,
                                std::vector<CrossCheck>* checks = nullptr,
                                const ConstraintLevel* previous = nullptr);

// Solution on C_{i+1} tangent to C_i: rows [flat; J_i] X = [eta - gamma; 0], frozen pivots.
DynamicsSolution solve_dynamics(const GeometricProblem& p, const std::vector<Constraint>& tangent_to,
                                const std::vector<VectorXd>& samples, const RunOptions& opt);

// Fixes gauge coefficients so that new constraints are preserved.
DynamicsSolution stability_solve(const GeometricProblem& p, const DynamicsSolution& dyn,
                                 const std::vector<Constraint>& new_constraints,
                                 const std::vector<VectorXd>& samples, const RunOptions& opt);

AlgorithmReport run(const GeometricProblem& p, const RunOptions& opt = {});

Termination classify_termination(bool projection_failed, int constraint_rank, int dim, bool new_constraints);

// Max |chi| of each tower's constraints on the other tower's samples.
double cross_vanishing(const AlgorithmReport& a, const AlgorithmReport& b);

}  // namespace jetflow

#endif
