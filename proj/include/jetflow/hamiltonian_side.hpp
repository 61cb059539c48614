#ifndef JETFLOW_HAMILTONIAN_SIDE_HPP
#define JETFLOW_HAMILTONIAN_SIDE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jetflow/constraint_engine.hpp"
#include "jetflow/jet_geometry.hpp"

namespace jetflow {

enum class ChartMode { AutoEliminate, UserSupplied };

// User-supplied primaries and optional energy override, expressions over (t, q, p).
struct UserPrimaries {
  std::vector<std::string> constraints;
  std::string energy;  // empty: recovered from the Lagrangian
};

// Chart of the primary constraint manifold inside J1*E.
// J1*E slots: t = 0, q_i = 1 + i, p_i = 1 + n + i.
// Chart slots: t, q, then the retained momenta p_kept[k] at 1 + n + k.
struct MomentumChart {
  int n = 0;
  ChartMode mode = ChartMode::AutoEliminate;
  LagrangianSystem sys;
  BaseConnection connection;
  SymbolTable table;                 // t, q1..qn, p1..pn
  std::vector<int> kept;             // momenta used as chart coordinates
  std::vector<int> eliminated;       // momenta fixed by the primaries
  std::vector<ScalarField> primaries;  // on J1*E
  std::vector<std::string> primary_descriptions;
  VectorField embed;     // chart -> J1*E
  VectorField project;   // J1*E -> chart
  VectorField fl0;       // J1E -> chart
  ScalarField energy;    // on the chart
  ScalarField energy_ext;  // energy composed with project, on J1*E
  ScalarField h0;        // energy - Y.p on the chart
  std::string h0_description;
  std::optional<std::vector<Expr>> theta_exprs;  // symbolic Hamilton-Cartan 1-form on the chart
  double image_residual = 0.0;   // max |primary(FL(x))|
  double energy_residual = 0.0;  // max |energy(FL0(x)) - E_L(x)|

  int dim() const { return 2 * n + 1; }
  int chart_dim() const { return 1 + n + static_cast<int>(kept.size()); }
};

MomentumChart build_primary_chart(const LagrangianSystem& sys, ChartMode mode, const BaseConnection& connection,
                                  const VectorXd& lagrangian_seed, const UserPrimaries* user = nullptr,
                                  std::uint64_t rng_seed = 7);

struct HamiltonCartanForms {
  int dim = 0;
  VectorField theta;
  MatrixField Omega;
  VectorField eta;
};

HamiltonCartanForms hamilton_cartan_forms(const MomentumChart& chart);

// max |FL0^* Omega_h0 - Omega_L| over the given Lagrangian points.
double pullback_residual(const MomentumChart& chart, const HamiltonCartanForms& forms, const LagrangianForms& lag,
                         const std::vector<VectorXd>& points);

GeometricProblem hamiltonian_problem(const MomentumChart& chart, const VectorXd& lagrangian_seed);
AlgorithmReport hamiltonian_algorithm(const MomentumChart& chart, const VectorXd& lagrangian_seed,
                                      const RunOptions& opt = {});

struct RelationReport {
  struct Generation {
    int index = 0;
    int lagrangian_codim = 0;
    int hamiltonian_codim = 0;
    double pullback_residual = 0.0;
  };
  std::vector<Generation> generations;
  bool counts_match = true;
  double max_residual = 0.0;
  double pushforward_residual = 0.0;  // final Lagrangian solution pushed to the chart, modulo gauge
  bool related = true;
  std::vector<std::string> notes;
};

RelationReport verify_fl_related(const AlgorithmReport& lag, const AlgorithmReport& ham, const MomentumChart& chart,
                                 double tol = 1e-7);

// Connection-induced cosymplectic structure on J1*E.
struct CosymplecticJ1Star {
  int n = 0;
  BaseConnection connection;
  VectorField theta_tilde;  // p dq - (Y.p) dt
  MatrixField omega_tilde;  // dq^dp + d(Y.p)^dt
  VectorField eta;          // dt
  VectorField R_tilde;      // d/dt + Y^i d/dq_i - p_j dY^j/dq_i d/dp_i
  ScalarField h;            // energy - Y.p, constant along eliminated momenta
  VectorField theta_h;      // p dq - (h + Y.p) dt
  MatrixField Omega_h;      // omega_tilde + dh^dt

  int dim() const { return 2 * n + 1; }
};

CosymplecticJ1Star build_cosymplectic(const MomentumChart& chart, const BaseConnection& connection);
// Same structure with h replaced by another extension of h0.
CosymplecticJ1Star with_hamiltonian(CosymplecticJ1Star s, ScalarField h);

template <class S> PrecoPoint<S> structure_at(const CosymplecticJ1Star& s, const Vec<S>& x) {
  return PrecoPoint<S>{Vec<S>(s.eta(x)), Mat<S>(s.omega_tilde(x)), Vec<S>(s.R_tilde(x))};
}

VectorField hamiltonian_field(const CosymplecticJ1Star& s, const ScalarField& F);
ScalarField poisson_bracket(const CosymplecticJ1Star& s, const ScalarField& F, const ScalarField& G);
VectorField evolution_field(const CosymplecticJ1Star& s);  // R_tilde + X_h

struct DiracContext {
  CosymplecticJ1Star structure;
  std::vector<ScalarField> constraints;  // all final constraints on J1*E, primaries first
  std::vector<std::string> descriptions;
  std::vector<int> second_class_index;
  std::vector<ScalarField> second_class;
  std::vector<std::string> second_class_descriptions;
  std::vector<ScalarField> first_class;
  std::vector<std::string> first_class_descriptions;
  int step1_rank = 0;  // rank of the primary block
  int step2_rank = 0;  // rank of the primary rows against all constraints
  int step3_rank = 0;  // rank of the full bracket matrix
  MatrixField Cbar;
  std::vector<VectorXd> samples;  // final samples embedded in J1*E
  double min_rcond = 1.0;
  double span_residual = 0.0;
  double first_class_residual = 0.0;

  bool empty() const { return second_class.empty(); }
};

std::vector<ScalarField> final_constraints_j1star(const MomentumChart& chart, const AlgorithmReport& ham,
                                                  std::vector<std::string>* descriptions = nullptr);

DiracContext classify_constraints(const CosymplecticJ1Star& s, const MomentumChart& chart, const AlgorithmReport& ham,
                                  const Tolerances& tol = {});

ScalarField dirac_bracket(const DiracContext& ctx, const ScalarField& F, const ScalarField& G);

// Q = C^{ab} X_{Xbar_a} dXbar_b, P = I - Q.
MatrixXd projector_Q(const DiracContext& ctx, const VectorXd& x);
MatrixXd projector_P(const DiracContext& ctx, const VectorXd& x);

// d g / dt = P(R_tilde)(g) + {g, h}_D
ScalarField evolution(const DiracContext& ctx, const ScalarField& g);
VectorXd projected_evolution(const DiracContext& ctx, const VectorXd& x);

// Chart dynamics pushed into J1*E.
VectorXd pushed_dynamics(const MomentumChart& chart, const DynamicsSolution& dyn, const VectorXd& chart_point);

struct ClosedBracketCheck {
  double inverse_residual = 0.0;       // |C C^-1 - I| with the stated inverse
  double literal_mismatch = 0.0;       // closed display with lower-index C
  double inverse_mismatch = 0.0;       // with the stated inverse C^{ab}
  double transposed_mismatch = 0.0;    // with its transpose
  bool time_dependent = false;         // some d Xbar / dt is nonzero
  std::string detail;
};

ClosedBracketCheck time_extended_bracket_check(const DiracContext& ctx);

// Checks specific to Lagrangians affine in the velocities: gamma_i = dL/dv_i, gamma_0 = -energy.
struct AffineChecks {
  bool applicable = false;
  double bracket_matrix_residual = 0.0;  // {xi_i, xi_j} - gamma_ij on final samples
  double reeb_formula_mismatch = 0.0;    // closed-form Reeb formula versus computed dynamics
  double reeb_formula_doubled_mismatch = 0.0;  // same with the factor 1/2 replaced by 1
  double closed_literal_mismatch = 0.0;  // closed-form Dirac bracket versus the general one
  double closed_g_fixed_mismatch = 0.0;  // last factor with dG/dp
  double closed_corrected_mismatch = 0.0;  // dG/dp and transposed inverse
  std::vector<std::string> warnings;
};

AffineChecks affine_checks(const DiracContext& ctx, const MomentumChart& chart, const AlgorithmReport& ham);

}  // namespace jetflow

#endif
