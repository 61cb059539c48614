#include "jetflow/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace jetflow {

namespace {

Json vec_json(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json checks_json(const std::vector<CrossCheck>& cs) {
  Json a = Json::array();
  for (const auto& c : cs) a.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"detail", c.detail}});
  return a;
}

Json dynamics_json(const std::optional<DynamicsSolution>& dyn, const std::vector<VectorXd>& samples) {
  if (!dyn || samples.empty()) return nullptr;
  Json d;
  d["at"] = vec_json(samples.front());
  d["X"] = vec_json(dyn->X_at_seed);
  d["gauge_dim"] = dyn->gauge_dim;
  Json g = Json::array();
  for (Eigen::Index j = 0; j < dyn->gauge_at_seed.cols(); ++j) g.push_back(vec_json(dyn->gauge_at_seed.col(j)));
  d["gauge"] = g;
  d["equation_residual"] = dyn->max_equation_residual;
  d["tangency_drift"] = dyn->max_tangency_drift;
  return d;
}

std::vector<double> residuals_on(const std::vector<Constraint>& cs, const std::vector<VectorXd>& samples) {
  std::vector<double> out;
  for (const auto& c : cs) out.push_back(max_abs_on(c.f, samples));
  return out;
}

Json tower_json(const AlgorithmReport& r) {
  Json t;
  t["status"] = to_string(r.status);
  t["final_level"] = r.final_level;
  Json gens = Json::array();
  for (const auto& l : r.levels) {
    Json g;
    g["generation"] = l.index;
    Json desc = Json::array();
    for (const auto& c : l.new_constraints) desc.push_back(c.description);
    g["constraint_descriptions"] = desc;
    g["constraint_count"] = l.constraints.size();
    g["rank"] = l.rank;
    g["sample_residuals"] = residuals_on(l.constraints, l.samples);
    g["samples"] = l.samples.size();
    if (!l.notes.empty()) g["notes"] = l.notes;
    gens.push_back(g);
  }
  t["generations"] = gens;
  t["dynamics"] = r.status == Termination::Final && !r.levels.empty() ? dynamics_json(r.dynamics, r.final().samples)
                                                                      : Json(nullptr);
  t["cross_checks"] = checks_json(r.checks);
  return t;
}

Json el_json(const ElReport& r) {
  Json t;
  t["status"] = to_string(r.status);
  t["final_level"] = r.final_level;
  Json gens = Json::array();
  for (const auto& l : r.levels) {
    Json g;
    g["generation"] = l.index;
    Json desc = Json::array();
    for (const auto& c : l.new_constraints)
      desc.push_back({{"description", c.constraint.description},
                      {"kind", to_string(c.kind)},
                      {"projectable", c.projectability.projectable},
                      {"projectability_defect", c.projectability.defect}});
    g["constraint_descriptions"] = desc;
    g["constraint_count"] = l.constraints.size();
    g["rank"] = l.rank;
    g["sample_residuals"] = residuals_on(l.constraints, l.samples);
    g["samples"] = l.samples.size();
    gens.push_back(g);
  }
  t["generations"] = gens;
  t["unique"] = r.unique;
  t["dynamics"] = r.status == Termination::Final ? dynamics_json(r.dynamics, r.final().samples) : Json(nullptr);
  t["cross_checks"] = checks_json(r.checks);
  t["notes"] = r.notes;
  return t;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

template <class F> bool stage(Analysis& a, const char* name, F&& fn) {
  try {
    fn();
    return true;
  } catch (const AssumptionFailure& e) {
    a.warnings.push_back(std::string(name) + ": " + e.what());
    if (a.failure.empty()) a.failure = std::string(name) + ": " + e.what();
  } catch (const DomainError& e) {
    a.warnings.push_back(std::string(name) + ": DomainError: " + e.what());
    if (a.failure.empty()) a.failure = std::string(name) + ": DomainError: " + e.what();
  } catch (const SingularMatrix& e) {
    a.warnings.push_back(std::string(name) + ": " + e.what());
    if (a.failure.empty()) a.failure = std::string(name) + ": " + e.what();
  }
  a.exit_code = 3;
  return false;
}

}  // namespace

Analysis run_analysis(const SystemSpec& spec) {
  Analysis a;
  a.spec = spec;
  const RunOptions& opt = spec.run;
  a.connection = spec.connection.empty() ? BaseConnection::trivial(spec.n)
                                         : BaseConnection::from_strings(spec.n, spec.connection);
  if (!stage(a, "system", [&] {
        a.sys = make_system(spec.n, spec.lagrangian, spec.seed, opt.tol, opt.rng_seed);
        a.forms = build_forms(*a.sys);
      }))
    return a;
  const LagrangianSystem& sys = *a.sys;
  const int d = sys.dim();

  stage(a, "lagrangian", [&] {
    GeometricProblem p = make_problem(d, a.forms->Omega, a.forms->eta, lift_connection(a.connection, d), spec.seed,
                                      sys.table.names());
    a.lagrangian = run(p, opt);
    for (const auto& w : a.lagrangian->warnings) a.warnings.push_back("lagrangian: " + w);
    GeometricProblem p2 = make_problem(d, a.forms->Omega, a.forms->eta, default_sode_connection(sys.n), spec.seed,
                                       sys.table.names());
    a.lagrangian_second = run(p2, opt);
    a.connection_cross = cross_vanishing(*a.lagrangian, *a.lagrangian_second);
    if (a.connection_cross > 1e-6)
      a.warnings.push_back("towers for the two connections differ: cross residual " + num(a.connection_cross));
  });

  stage(a, "hamiltonian", [&] {
    UserPrimaries user{spec.primaries, spec.energy};
    ChartMode mode = spec.primaries.empty() ? ChartMode::AutoEliminate : ChartMode::UserSupplied;
    a.chart = build_primary_chart(sys, mode, a.connection, spec.seed, spec.primaries.empty() ? nullptr : &user,
                                  opt.rng_seed);
    a.hamiltonian = hamiltonian_algorithm(*a.chart, spec.seed, opt);
    for (const auto& w : a.hamiltonian->warnings) a.warnings.push_back("hamiltonian: " + w);
    if (a.lagrangian) {
      a.relation = verify_fl_related(*a.lagrangian, *a.hamiltonian, *a.chart);
      if (!a.relation->related) a.warnings.push_back("Lagrangian and Hamiltonian towers are not FL-related");
    }
  });

  if (a.hamiltonian && a.hamiltonian->status == Termination::Final) {
    stage(a, "classification", [&] {
      a.structure = build_cosymplectic(*a.chart, a.connection);
      a.dirac = classify_constraints(*a.structure, *a.chart, *a.hamiltonian, opt.tol);
      a.closed_check = time_extended_bracket_check(*a.dirac);
      if (a.closed_check->inverse_residual > 1e-10)
        a.warnings.push_back("stated inverse of C + a a^T fails: residual " + num(a.closed_check->inverse_residual));
      a.affine = affine_checks(*a.dirac, *a.chart, *a.hamiltonian);
      for (const auto& w : a.affine->warnings) a.warnings.push_back("affine: " + w);
    });
  }

  if (a.lagrangian && a.lagrangian->status == Termination::Final) {
    stage(a, "sode", [&] {
      a.sode = sode_submanifold(sys, *a.lagrangian, opt);
      if (a.sode->opposite_sign_tangency_defect > 1e-9)
        a.warnings.push_back("X_f - X_f(xi_j) W_j is not tangent to S (defect " + num(a.sode->opposite_sign_tangency_defect) +
                             "); X_f + X_f(xi_j) W_j used");
    });
  }
  stage(a, "euler_lagrange", [&] {
    a.euler_lagrange = euler_lagrange_algorithm(sys, *a.forms, spec.seed, opt, a.lagrangian ? &*a.lagrangian : nullptr);
    for (const auto& w : a.euler_lagrange->warnings) a.warnings.push_back("euler_lagrange: " + w);
  });
  return a;
}

Json analysis_report(const Analysis& a) {
  Json r;
  const SystemSpec& s = a.spec;
  r["system"] = {{"name", s.name}, {"n", s.n}, {"lagrangian", s.lagrangian}, {"seed", vec_json(s.seed)},
                 {"connection", s.connection.empty() ? Json("d/dt") : Json(s.connection)}};
  if (a.sys) {
    r["regularity"] = a.sys->regularity == Regularity::Regular ? "regular" : "singular";
    r["corank"] = a.sys->corank;
  } else {
    r["regularity"] = nullptr;
    r["corank"] = nullptr;
  }

  Json towers;
  towers["lagrangian"] = a.lagrangian ? tower_json(*a.lagrangian) : Json(nullptr);
  towers["lagrangian_second_order_connection"] = a.lagrangian_second ? tower_json(*a.lagrangian_second) : Json(nullptr);
  towers["hamiltonian"] = a.hamiltonian ? tower_json(*a.hamiltonian) : Json(nullptr);
  towers["euler_lagrange"] = a.euler_lagrange ? el_json(*a.euler_lagrange) : Json(nullptr);
  r["towers"] = towers;

  if (a.chart) {
    const MomentumChart& c = *a.chart;
    Json ch;
    ch["mode"] = c.mode == ChartMode::AutoEliminate ? "auto" : "user";
    ch["primary_constraints"] = c.primary_descriptions;
    Json kept = Json::array(), elim = Json::array();
    for (int k : c.kept) kept.push_back("p" + std::to_string(k + 1));
    for (int k : c.eliminated) elim.push_back("p" + std::to_string(k + 1));
    ch["kept_momenta"] = kept;
    ch["eliminated_momenta"] = elim;
    ch["hamiltonian"] = c.h0_description;
    ch["image_residual"] = c.image_residual;
    ch["energy_residual"] = c.energy_residual;
    r["primary_chart"] = ch;
  } else {
    r["primary_chart"] = nullptr;
  }

  if (a.dirac) {
    const DiracContext& x = *a.dirac;
    r["classification"] = {{"second_class", x.second_class_descriptions},
                           {"first_class", x.first_class_descriptions},
                           {"step_ranks", {x.step1_rank, x.step2_rank, x.step3_rank}},
                           {"min_rcond", x.min_rcond},
                           {"span_residual", x.span_residual},
                           {"first_class_residual", x.first_class_residual}};
    Json table = Json::array();
    if (!x.samples.empty()) {
      const int n = s.n, dim = 2 * n + 1;
      const VectorXd& pt = x.samples.front();
      SymbolTable names = SymbolTable::momentum(n);
      for (int i = 1; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j) {
          ScalarField F = coordinate_field(dim, i), G = coordinate_field(dim, j);
          table.push_back({{"f", names.name(i)},
                           {"g", names.name(j)},
                           {"bracket", poisson_bracket(x.structure, F, G)(pt)},
                           {"dirac", dirac_bracket(x, F, G)(pt)}});
        }
      r["dirac_bracket_point"] = vec_json(pt);
    }
    r["dirac_bracket_table"] = table;
  } else {
    r["classification"] = nullptr;
    r["dirac_bracket_table"] = Json::array();
  }

  if (a.sode) {
    const SodeSubmanifold& so = *a.sode;
    Json c = Json::array();
    for (const auto& k : so.constraints) c.push_back(k.description);
    r["sode_submanifold"] = {{"constraints", c},
                             {"fiber_defect", so.fiber_defect},
                             {"dxi_W_residual", so.dxi_W_residual},
                             {"sode_residual", so.sode_residual},
                             {"tangency_residual", so.tangency_residual},
                             {"opposite_sign_tangency_defect", so.opposite_sign_tangency_defect},
                             {"X_LS_at", so.samples.empty() ? Json(nullptr) : vec_json(so.samples.front())},
                             {"X_LS", so.samples.empty() ? Json(nullptr) : vec_json(so.X_LS(so.samples.front()))}};
  } else {
    r["sode_submanifold"] = nullptr;
  }

  Json checks;
  checks["connection_cross_residual"] = a.lagrangian_second ? Json(a.connection_cross) : Json(nullptr);
  if (a.relation) {
    Json g = Json::array();
    for (const auto& x : a.relation->generations)
      g.push_back({{"generation", x.index},
                   {"lagrangian_codim", x.lagrangian_codim},
                   {"hamiltonian_codim", x.hamiltonian_codim},
                   {"pullback_residual", x.pullback_residual}});
    checks["fl_relation"] = {{"related", a.relation->related},
                             {"counts_match", a.relation->counts_match},
                             {"max_residual", a.relation->max_residual},
                             {"pushforward_residual", a.relation->pushforward_residual},
                             {"generations", g},
                             {"notes", a.relation->notes}};
  } else {
    checks["fl_relation"] = nullptr;
  }
  if (a.closed_check)
    checks["time_dependent_bracket"] = {{"inverse_residual", a.closed_check->inverse_residual},
                                        {"lower_index_mismatch", a.closed_check->literal_mismatch},
                                        {"inverse_mismatch", a.closed_check->inverse_mismatch},
                                        {"transposed_inverse_mismatch", a.closed_check->transposed_mismatch},
                                        {"time_dependent", a.closed_check->time_dependent},
                                        {"detail", a.closed_check->detail}};
  if (a.affine && a.affine->applicable)
    checks["affine"] = {{"bracket_matrix_residual", a.affine->bracket_matrix_residual},
                        {"reeb_formula_mismatch", a.affine->reeb_formula_mismatch},
                        {"reeb_formula_doubled_mismatch", a.affine->reeb_formula_doubled_mismatch},
                        {"closed_bracket_literal_mismatch", a.affine->closed_literal_mismatch},
                        {"closed_bracket_g_fixed_mismatch", a.affine->closed_g_fixed_mismatch},
                        {"closed_bracket_corrected_mismatch", a.affine->closed_corrected_mismatch}};
  r["checks"] = checks;
  r["warnings"] = a.warnings;

  const RunOptions& o = s.run;
  Json prov;
  prov["rng_seed"] = o.rng_seed;
  prov["samples"] = o.samples;
  prov["sample_sigma"] = o.sample_sigma;
  prov["zero_test_points"] = o.zero_test_points;
  prov["max_iter"] = o.max_iter;
  prov["tolerances"] = {{"rank", o.tol.rank},           {"rank_floor", o.tol.rank_floor},
                        {"residual", o.tol.residual},   {"projection", o.tol.projection},
                        {"subspace", o.tol.subspace},   {"zero_drop", o.tol.zero_drop},
                        {"pivot_rcond", o.tol.pivot_rcond}};
  if (a.sys) {
    Json piv = Json::array(), non = Json::array();
    for (int k : a.sys->pivots) piv.push_back("v" + std::to_string(k + 1));
    for (int k : a.sys->nonpivots) non.push_back("v" + std::to_string(k + 1));
    prov["hessian_pivots"] = piv;
    prov["hessian_nonpivots"] = non;
    prov["hessian_pivot_rcond"] = a.sys->pivot_rcond;
  }
  r["provenance"] = prov;
  r["status"] = {{"exit_code", a.exit_code}, {"failure", a.failure}};
  return r;
}

std::string analysis_summary(const Analysis& a) {
  std::ostringstream out;
  out << "system " << a.spec.name << " (n = " << a.spec.n << "): ";
  if (!a.sys) {
    out << "not analysed\n";
  } else {
    out << (a.sys->regularity == Regularity::Regular ? "regular" : "singular") << ", corank " << a.sys->corank << "\n";
  }
  auto tower = [&](const char* name, const AlgorithmReport& r) {
    out << name << ": " << to_string(r.status) << " at level " << r.final_level << "\n";
    for (const auto& l : r.levels)
      for (const auto& c : l.new_constraints) out << "  " << c.description << "\n";
    if (r.dynamics) {
      out << "  X at seed = " << describe_vector(r.dynamics->X_at_seed) << ", gauge dimension " << r.dynamics->gauge_dim
          << "\n";
    }
  };
  if (a.lagrangian) tower("lagrangian tower", *a.lagrangian);
  if (a.chart) {
    out << "primary constraints:";
    for (const auto& p : a.chart->primary_descriptions) out << " " << p << ";";
    out << "\n";
  }
  if (a.hamiltonian) tower("hamiltonian tower", *a.hamiltonian);
  if (a.dirac) {
    out << "second class: " << a.dirac->second_class.size() << ", first class: " << a.dirac->first_class.size() << "\n";
  }
  if (a.euler_lagrange) {
    const ElReport& e = *a.euler_lagrange;
    out << "euler-lagrange tower: " << to_string(e.status) << " at level " << e.final_level
        << (e.unique ? ", unique second-order field" : "") << "\n";
    for (const auto& l : e.levels)
      for (const auto& c : l.new_constraints)
        out << "  [" << to_string(c.kind) << "] " << c.constraint.description << "\n";
  }
  for (const auto& w : a.warnings) out << "warning: " << w << "\n";
  return out.str();
}

std::vector<BracketSample> bracket_samples(const Analysis& a, const std::string& F, const std::string& G) {
  if (!a.dirac) throw AssumptionFailure("NotFinal", "no constraint classification available: " + a.failure);
  SymbolTable table = SymbolTable::momentum(a.spec.n);
  const int dim = 2 * a.spec.n + 1;
  ScalarField f = to_field(parse(F, table), dim), g = to_field(parse(G, table), dim);
  ScalarField pb = poisson_bracket(a.dirac->structure, f, g), db = dirac_bracket(*a.dirac, f, g);
  std::vector<BracketSample> out;
  for (std::size_t k = 0; k < a.dirac->samples.size() && k < 11; ++k) {
    const VectorXd& x = a.dirac->samples[k];
    out.push_back({x, pb(x), db(x)});
  }
  return out;
}

Trajectory integrate(const Analysis& a, double horizon, double step) {
  if (!(step > 0.0) || !(horizon >= 0.0)) throw InputError("step must be positive and horizon non-negative");
  Trajectory tr;
  VectorField X;
  VectorXd x0;
  std::vector<Constraint> watch;
  if (a.euler_lagrange && a.euler_lagrange->status == Termination::Final && a.euler_lagrange->unique) {
    X = a.euler_lagrange->dynamics->X_part;
    x0 = a.euler_lagrange->final().samples.front();
    watch = a.euler_lagrange->final().constraints;
    tr.field = "euler-lagrange";
  } else if (a.sode && !a.sode->samples.empty()) {
    X = a.sode->X_LS;
    x0 = a.sode->samples.front();
    watch = a.sode->stack;
    tr.field = "sode-submanifold";
  } else if (a.lagrangian && a.lagrangian->status == Termination::Final && a.lagrangian->dynamics) {
    X = a.lagrangian->dynamics->X_part;
    x0 = a.lagrangian->final().samples.front();
    watch = a.lagrangian->final().constraints;
    tr.field = "dynamical";
  } else {
    throw AssumptionFailure("NotFinal", "seed cannot be projected onto a final constraint manifold: " + a.failure);
  }
  const LagrangianSystem& sys = *a.sys;
  for (int i = 0; i < sys.dim(); ++i) tr.header.push_back(sys.table.name(i));
  for (std::size_t k = 0; k < watch.size(); ++k) tr.header.push_back("drift" + std::to_string(k + 1));
  tr.header.push_back("el_residual");
  for (const auto& x : integrate_rk4(X, x0, horizon, step)) {
    std::vector<double> row(x.data(), x.data() + x.size());
    for (const auto& c : watch) row.push_back(std::fabs(c.f(x)));
    row.push_back(el_residual(sys, X, x).cwiseAbs().maxCoeff());
    tr.rows.push_back(row);
  }
  return tr;
}

std::string to_csv(const Trajectory& tr) {
  std::ostringstream out;
  for (std::size_t i = 0; i < tr.header.size(); ++i) out << (i ? "," : "") << tr.header[i];
  out << "\n";
  char buf[40];
  for (const auto& row : tr.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace jetflow
