#include "jetflow/sode_analysis.hpp"

#include <algorithm>

namespace jetflow {

VectorField lie_bracket(const VectorField& A, const VectorField& B) {
  return VectorField(A.arity(), [A, B](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> a = A(x), b = B(x);
    return Vec<S>(jacobian<S>(B, x) * a - jacobian<S>(A, x) * b);
  });
}

VectorField ker_fl_vector(const LagrangianSystem& sys, int j) {
  MatrixField W = ker_fl_field(sys);
  return VectorField(sys.dim(), [W, j](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return Vec<S>(Mat<S>(W(x)).col(j));
  });
}

Projectability projectability_test(const ScalarField& f, const LagrangianSystem& sys,
                                   const std::vector<VectorXd>& zero_set_samples, double tol) {
  Projectability out;
  for (const auto& x : zero_set_samples) {
    MatrixXd W = ker_fl_field(sys)(x);
    if (W.cols() == 0) break;
    VectorXd g = gradient<double>(f, x);
    out.defect = std::max(out.defect, (W.transpose() * g).cwiseAbs().maxCoeff());
  }
  out.projectable = out.defect <= tol;
  return out;
}

// ---------------------------------------------------------------- SODE submanifold

SodeSubmanifold sode_submanifold(const LagrangianSystem& sys, const AlgorithmReport& lag, const RunOptions& opt) {
  if (!lag.dynamics) throw AssumptionFailure("NotFinal", "SODE submanifold needs a final particular solution");
  SodeSubmanifold out;
  const int n = sys.n, d = sys.dim();
  out.X_f = lag.dynamics->X_part;
  const VectorField Xf = out.X_f;
  const std::vector<VectorXd>& fin = lag.final().samples;
  MatrixField Wf = ker_fl_field(sys);
  const int m = static_cast<int>(sys.nonpivots.size());

  for (const auto& x : fin) {
    MatrixXd J = jacobian<double>(Xf, x);
    MatrixXd W = Wf(x);
    if (m) out.fiber_defect = std::max(out.fiber_defect, (J.topRows(n + 1) * W).cwiseAbs().maxCoeff());
  }
  if (out.fiber_defect > 1e-8)
    throw AssumptionFailure("NotProjectable", "particular solution is not FL-projectable (fiber defect " +
                                                  describe_vector(VectorXd::Constant(1, out.fiber_defect)) + ")");

  std::vector<ScalarField> xi;
  for (int j = 0; j < m; ++j) {
    const int N = sys.nonpivots[static_cast<std::size_t>(j)];
    ScalarField f(d, [Xf, n, N](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return S(Vec<S>(Xf(x))[1 + N] - x[1 + n + N]);
    });
    xi.push_back(f);
    out.constraints.push_back(Constraint{f, "A^" + std::to_string(N + 1) + " - v" + std::to_string(N + 1), 0});
  }
  out.stack = lag.final().constraints;
  out.stack.insert(out.stack.end(), out.constraints.begin(), out.constraints.end());

  auto corrected = [Xf, xi, Wf](double sign) {
    return VectorField(Xf.arity(), [Xf, xi, Wf, sign](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Vec<S> X = Xf(x);
      if (xi.empty()) return X;
      Mat<S> W = Wf(x);
      for (std::size_t j = 0; j < xi.size(); ++j)
        X += S(sign) * gradient<S>(xi[j], x).dot(Vec<S>(Xf(x))) * W.col(static_cast<Eigen::Index>(j));
      return X;
    });
  };
  out.X_LS = corrected(1.0);
  out.X_LS_opposite = corrected(-1.0);

  SampleSet ss = sample_level(fields_of(out.stack), fin.front(), opt.rng_seed + 4242, opt);
  if (!ss.ok) throw AssumptionFailure("EmptySubmanifold", "SODE submanifold could not be sampled");
  out.samples = ss.points;
  if (ss.failures) out.notes.push_back(std::to_string(ss.failures) + " S-sample projections discarded");

  std::vector<ScalarField> stack = fields_of(out.stack);
  for (const auto& x : out.samples) {
    MatrixXd W = Wf(x);
    if (m) {
      MatrixXd G = stacked_gradients<double>(xi, x);
      out.dxi_W_residual = std::max(out.dxi_W_residual, (G * W + MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff());
    }
    VectorXd X = out.X_LS(x);
    out.sode_residual = std::max(out.sode_residual, canonical_endomorphism<double>(n, x, X).cwiseAbs().maxCoeff());
    out.eta_residual = std::max(out.eta_residual, std::fabs(X[0] - 1.0));
    if (!stack.empty()) {
      MatrixXd J = stacked_gradients<double>(stack, x);
      out.tangency_residual = std::max(out.tangency_residual, (J * X).cwiseAbs().maxCoeff());
      out.opposite_sign_tangency_defect =
          std::max(out.opposite_sign_tangency_defect, (J * VectorXd(out.X_LS_opposite(x))).cwiseAbs().maxCoeff());
    }
  }
  return out;
}

// ---------------------------------------------------------------- Euler-Lagrange tower

const char* to_string(ConstraintKind k) { return k == ConstraintKind::Dynamical ? "dynamical" : "SODE"; }

namespace {

// Rows [Omega^T E_v; J E_v] a = [-Omega^T D; -J D]
template <class S>
void el_system(const MatrixField& Omega, const VectorField& D, const std::vector<ScalarField>& cs, int n,
               const Vec<S>& x, Mat<S>& M, Vec<S>& r) {
  const Eigen::Index d = 2 * n + 1, k = static_cast<Eigen::Index>(cs.size());
  Mat<S> Wt = Mat<S>(Omega(x)).transpose();
  Vec<S> Dx = D(x);
  M.resize(d + k, n);
  r.resize(d + k);
  M.topRows(d) = Wt.rightCols(n);
  r.head(d) = -(Wt * Dx);
  if (k) {
    Mat<S> J = stacked_gradients<S>(cs, x);
    M.bottomRows(k) = J.rightCols(n);
    r.tail(k) = -(J * Dx);
  }
}

MatrixXd el_matrix(const MatrixField& Omega, const VectorField& D, const std::vector<ScalarField>& cs, int n,
                   const VectorXd& x) {
  Mat<double> M;
  Vec<double> r;
  el_system<double>(Omega, D, cs, n, x, M, r);
  return M;
}

struct Candidates {
  std::vector<Constraint> list;
  int rank = 0;
};

Candidates el_candidates(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorField& D,
                         const ElLevel& level, const RunOptions& opt) {
  const int n = sys.n, gen = level.index + 1;
  std::vector<ScalarField> cs = fields_of(level.constraints);
  MatrixField Omega = forms.Omega;
  MatrixXd M0 = el_matrix(Omega, D, cs, n, level.samples.front());
  PivotSet piv = choose_pivots(M0.transpose(), opt.tol);
  for (const auto& x : level.samples) {
    MatrixXd M = el_matrix(Omega, D, cs, n, x);
    if (numeric_rank(M, opt.tol) != piv.rank)
      throw AssumptionFailure("RankDrift", "second-order system rank changes across level " +
                                               std::to_string(level.index) + " samples");
    if (piv.rank && pivot_rcond(MatrixXd(M.transpose()), piv) < opt.tol.pivot_rcond)
      throw AssumptionFailure("PivotDegeneracy", "second-order system pivot block degenerates at a sample");
  }
  Candidates out;
  out.rank = piv.rank;
  MatrixXd U0 = frozen_null<double>(MatrixXd(M0.transpose()), piv);
  for (Eigen::Index c = 0; c < U0.cols(); ++c) {
    ScalarField f(sys.dim(), [Omega, D, cs, n, piv, c](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> M;
      Vec<S> r;
      el_system<S>(Omega, D, cs, n, x, M, r);
      Mat<S> U = frozen_null<S>(Mat<S>(M.transpose()), piv);
      return S(U.col(c).dot(r));
    });
    out.list.push_back(Constraint{f,
                                  "generation " + std::to_string(gen) + ": u^T r with u(level seed) = " +
                                      describe_vector(U0.col(c)),
                                  gen});
  }
  return out;
}

// Samples where the second-order system has another rank than at the level seed lie on a different
// stratum of a reducible zero set; a minority of them is dropped.
void discard_off_stratum(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorField& D, ElLevel& level,
                         const RunOptions& opt) {
  if (level.samples.size() < 2) return;
  std::vector<ScalarField> cs = fields_of(level.constraints);
  const int r0 = numeric_rank(el_matrix(forms.Omega, D, cs, sys.n, level.samples.front()), opt.tol);
  std::vector<VectorXd> kept;
  for (const auto& x : level.samples)
    if (numeric_rank(el_matrix(forms.Omega, D, cs, sys.n, x), opt.tol) == r0) kept.push_back(x);
  const std::size_t dropped = level.samples.size() - kept.size();
  if (dropped == 0) return;
  if (4 * dropped > level.samples.size())
    throw AssumptionFailure("RankDrift", "second-order system rank changes across level " + std::to_string(level.index) +
                                             " samples");
  level.notes.push_back(std::to_string(dropped) + " samples on a lower-rank stratum discarded");
  level.samples = kept;
}

DynamicsSolution el_dynamics(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorField& D,
                             const ElLevel& level, const RunOptions& opt) {
  const int n = sys.n, d = sys.dim();
  std::vector<ScalarField> cs = fields_of(level.constraints);
  MatrixField Omega = forms.Omega;
  PivotSet piv = choose_pivots(el_matrix(Omega, D, cs, n, level.samples.front()), opt.tol);
  DynamicsSolution dyn;
  dyn.X_part = VectorField(d, [Omega, D, cs, n, piv](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> M;
    Vec<S> r;
    el_system<S>(Omega, D, cs, n, x, M, r);
    Vec<S> X = D(x);
    X.tail(n) += frozen_solve<S>(M, r, piv);
    return X;
  });
  dyn.gauge_basis = MatrixField(d, [Omega, D, cs, n, piv, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> M;
    Vec<S> r;
    el_system<S>(Omega, D, cs, n, x, M, r);
    Mat<S> N = frozen_null<S>(M, piv);
    Mat<S> G = Mat<S>::Zero(d, N.cols());
    G.bottomRows(n) = N;
    return G;
  });
  dyn.gauge_dim = n - piv.rank;
  dyn.X_at_seed = dyn.X_part(level.samples.front());
  dyn.gauge_at_seed = dyn.gauge_basis(level.samples.front());
  for (const auto& x : level.samples) {
    VectorXd X = dyn.X_part(x);
    dyn.max_equation_residual =
        std::max(dyn.max_equation_residual, (MatrixXd(forms.Omega(x)).transpose() * X).cwiseAbs().maxCoeff());
    if (!cs.empty())
      dyn.max_tangency_drift =
          std::max(dyn.max_tangency_drift, (stacked_gradients<double>(cs, x) * X).cwiseAbs().maxCoeff());
  }
  return dyn;
}

// First generation against the functions i(Z) i(D) Omega_L for Z in {[W_j, D]} and the vertical basis.
void check_first_generation(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorField& D,
                            const ElLevel& l0, const ElLevel& l1, std::vector<CrossCheck>& checks,
                            const RunOptions& opt) {
  const int n = sys.n, d = sys.dim();
  std::vector<VectorField> Zs;
  for (int j = 0; j < static_cast<int>(sys.nonpivots.size()); ++j) Zs.push_back(lie_bracket(ker_fl_vector(sys, j), D));
  for (int i = 0; i < n; ++i) {
    VectorXd e = VectorXd::Zero(d);
    e[1 + n + i] = 1.0;
    Zs.push_back(constant_vector_field(e));
  }
  MatrixField Omega = forms.Omega;
  std::vector<ScalarField> fz;
  for (const auto& Z : Zs)
    fz.push_back(ScalarField(d, [Omega, D, Z](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return S(Vec<S>(Z(x)).dot(Mat<S>(Omega(x)).transpose() * Vec<S>(D(x))));
    }));

  CrossCheck fwd{"el_first_generation_forward", true, 0.0, "i(Z)i(D)Omega_L on first-generation samples"};
  for (const auto& f : fz) fwd.value = std::max(fwd.value, max_abs_on(f, l1.samples));
  fwd.passed = fwd.value <= 1e-7;
  checks.push_back(fwd);

  CrossCheck back{"el_first_generation_converse", true, 0.0,
                  "first-generation constraints on the projected zero set of i(Z)i(D)Omega_L"};
  std::vector<ScalarField> mine = fields_of(l1.constraints);
  int used = 0;
  for (const auto& x : l0.samples) {
    ProjectionResult pr = project_point(fz, x, opt.tol);
    if (!pr.converged) continue;
    ++used;
    for (const auto& c : mine) back.value = std::max(back.value, std::fabs(c(pr.x)));
  }
  back.passed = used > 0 && back.value <= 1e-7;
  if (used == 0) back.detail += " (no projection converged)";
  checks.push_back(back);
}

}  // namespace

ElReport euler_lagrange_algorithm(const LagrangianSystem& sys, const LagrangianForms& forms, const VectorXd& seed,
                                  const RunOptions& opt, const AlgorithmReport* dynamical) {
  const int d = sys.dim();
  VectorField D = default_sode_connection(sys.n);
  ElReport rep;
  ElLevel l0;
  l0.index = 0;
  l0.samples = sample_level({}, seed, opt.rng_seed + 909, opt).points;
  rep.levels.push_back(l0);
  const int max_iter = opt.max_iter < 0 ? d : opt.max_iter;
  bool done = false;
  for (int it = 0; it <= max_iter && !done; ++it) {
    ElLevel& cur = rep.levels.back();
    discard_off_stratum(sys, forms, D, cur, opt);
    Candidates cands = el_candidates(sys, forms, D, cur, opt);
    cur.system_rank = cands.rank;
    const int gen = cur.index + 1;
    Extension ext = extend_stack(cur.constraints, cands.list, cur.samples, opt.rng_seed + 7919ULL * gen, opt);
    cur.notes.insert(cur.notes.end(), ext.notes.begin(), ext.notes.end());
    if (ext.empty) {
      ElLevel next;
      next.index = gen;
      next.notes.push_back("zero set of the new constraints could not be sampled");
      rep.levels.push_back(next);
      rep.status = Termination::Empty;
      rep.final_level = gen;
      return rep;
    }
    if (ext.added.empty()) {
      rep.status = Termination::Final;
      rep.final_level = cur.index;
      done = true;
      break;
    }
    ElLevel next;
    next.index = gen;
    next.constraints = cur.constraints;
    for (const auto& c : ext.added) next.constraints.push_back(c);
    next.samples = ext.samples.points;
    std::vector<ScalarField> cs = fields_of(next.constraints);
    next.rank = numeric_rank(stacked_gradients<double>(cs, next.samples.front()), opt.tol);
    for (const auto& c : next.constraints) next.max_residual = std::max(next.max_residual, max_abs_on(c.f, next.samples));
    for (const auto& c : ext.added) {
      TaggedConstraint t;
      t.constraint = c;
      if (dynamical && dynamical->status == Termination::Final) {
        double v = max_abs_on(c.f, dynamical->final().samples);
        t.kind = v <= 1e-7 ? ConstraintKind::Dynamical : ConstraintKind::Sode;
      } else {
        t.kind = ConstraintKind::Sode;
      }
      t.projectability = projectability_test(c.f, sys, next.samples);
      next.new_constraints.push_back(t);
    }
    rep.levels.push_back(next);
    if (gen == 1 && opt.cross_checks) check_first_generation(sys, forms, D, rep.levels[0], rep.levels[1], rep.checks, opt);
    if (static_cast<int>(rep.levels.back().constraints.size()) >= d) {
      rep.status = Termination::ZeroDimensional;
      rep.final_level = gen;
      return rep;
    }
  }
  if (!done) {
    rep.status = Termination::MaxIterExceeded;
    rep.final_level = static_cast<int>(rep.levels.size()) - 1;
    return rep;
  }
  rep.dynamics = el_dynamics(sys, forms, D, rep.final(), opt);
  rep.unique = rep.dynamics->gauge_dim == 0;
  CrossCheck eq{"el_final_equations", true, rep.dynamics->max_equation_residual, "i(X)Omega_L on final samples"};
  eq.passed = eq.value <= 1e-8;
  CrossCheck tg{"el_final_tangency", true, rep.dynamics->max_tangency_drift, "dchi(X) on final samples"};
  tg.passed = tg.value <= 1e-8;
  rep.checks.push_back(eq);
  rep.checks.push_back(tg);
  for (const auto& c : rep.checks)
    if (!c.passed) rep.warnings.push_back("cross-check " + c.name + " failed: " + describe_vector(VectorXd::Constant(1, c.value)));
  if (!rep.unique)
    rep.notes.push_back("second-order solution on the final manifold has " + std::to_string(rep.dynamics->gauge_dim) +
                        " undetermined vertical directions");
  return rep;
}

// ---------------------------------------------------------------- trajectories

VectorXd el_residual(const LagrangianSystem& sys, const VectorField& X, const VectorXd& x) {
  VectorXd Xv = X(x);
  VectorXd out(sys.n);
  for (int r = 0; r < sys.n; ++r) {
    VectorXd g = gradient<double>(to_field(sys.Lv[static_cast<std::size_t>(r)], sys.dim()), x);
    out[r] = g.dot(Xv) - eval(sys.Lq[static_cast<std::size_t>(r)], Vec<double>(x));
  }
  return out;
}

std::vector<VectorXd> integrate_rk4(const VectorField& X, const VectorXd& x0, double horizon, double step) {
  if (!(step > 0.0) || !(horizon >= 0.0)) throw InputError("integration step must be positive and horizon non-negative");
  const long steps = std::lround(horizon / step);
  std::vector<VectorXd> traj{x0};
  traj.reserve(static_cast<std::size_t>(steps) + 1);
  VectorXd x = x0;
  for (long k = 0; k < steps; ++k) {
    VectorXd k1 = X(x);
    VectorXd k2 = X(VectorXd(x + 0.5 * step * k1));
    VectorXd k3 = X(VectorXd(x + 0.5 * step * k2));
    VectorXd k4 = X(VectorXd(x + step * k3));
    x += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    traj.push_back(x);
  }
  return traj;
}

double trajectory_el_residual(const LagrangianSystem& sys, const std::vector<VectorXd>& traj, double step) {
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < traj.size(); ++k) {
    for (int r = 0; r < sys.n; ++r) {
      const Expr& Lv = sys.Lv[static_cast<std::size_t>(r)];
      double ddt = (eval(Lv, Vec<double>(traj[k + 1])) - eval(Lv, Vec<double>(traj[k - 1]))) / (2.0 * step);
      double lq = eval(sys.Lq[static_cast<std::size_t>(r)], Vec<double>(traj[k]));
      worst = std::max(worst, std::fabs(ddt - lq));
    }
  }
  return worst;
}

}  // namespace jetflow
