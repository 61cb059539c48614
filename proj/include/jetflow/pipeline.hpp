#ifndef JETFLOW_PIPELINE_HPP
#define JETFLOW_PIPELINE_HPP

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetflow/config.hpp"
#include "jetflow/hamiltonian_side.hpp"
#include "jetflow/sode_analysis.hpp"

namespace jetflow {

using Json = nlohmann::ordered_json;

// Everything computed by `analyze`. Stages after a failure are left empty.
struct Analysis {
  SystemSpec spec;
  std::optional<LagrangianSystem> sys;
  std::optional<LagrangianForms> forms;
  BaseConnection connection;
  std::optional<AlgorithmReport> lagrangian;         // connection lifted from [connection]
  std::optional<AlgorithmReport> lagrangian_second;  // default second-order connection
  double connection_cross = 0.0;
  std::optional<MomentumChart> chart;
  std::optional<AlgorithmReport> hamiltonian;
  std::optional<RelationReport> relation;
  std::optional<CosymplecticJ1Star> structure;
  std::optional<DiracContext> dirac;
  std::optional<SodeSubmanifold> sode;
  std::optional<ElReport> euler_lagrange;
  std::optional<ClosedBracketCheck> closed_check;
  std::optional<AffineChecks> affine;
  std::vector<std::string> warnings;
  std::string failure;  // first assumption failure, if any
  int exit_code = 0;
};

Analysis run_analysis(const SystemSpec& spec);
Json analysis_report(const Analysis& a);
std::string analysis_summary(const Analysis& a);

struct BracketSample {
  VectorXd point;  // on J1*E
  double poisson = 0.0;
  double dirac = 0.0;
};

// {F, G} and {F, G}_D at the final seed and up to ten further final samples; F, G over (t, q, p).
std::vector<BracketSample> bracket_samples(const Analysis& a, const std::string& F, const std::string& G);

struct Trajectory {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string field;  // which vector field was integrated
};

// RK4 from the projected seed on the final Euler-Lagrange field if unique, else X_LS, else the dynamical solution.
Trajectory integrate(const Analysis& a, double horizon, double step);
std::string to_csv(const Trajectory& tr);

}  // namespace jetflow

#endif
