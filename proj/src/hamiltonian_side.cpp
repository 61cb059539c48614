#include "jetflow/hamiltonian_side.hpp"

#include <algorithm>
#include <random>

namespace jetflow {

namespace {

std::string momentum_name(int i) { return "p" + std::to_string(i + 1); }

// Solves A z = b symbolically; pivots chosen by magnitude at the given point.
std::vector<Expr> solve_symbolic(std::vector<std::vector<Expr>> A, std::vector<Expr> b, const VectorXd& at) {
  const std::size_t r = b.size();
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t best = k;
    double mag = -1.0;
    for (std::size_t i = k; i < r; ++i) {
      double v = std::fabs(eval(A[i][k], at));
      if (v > mag) {
        mag = v;
        best = i;
      }
    }
    if (!(mag > 0.0)) throw AssumptionFailure("PivotDegeneracy", "singular Hessian pivot block during elimination");
    std::swap(A[k], A[best]);
    std::swap(b[k], b[best]);
    for (std::size_t i = k + 1; i < r; ++i) {
      if (is_constant(A[i][k], 0.0)) continue;
      Expr f = div(A[i][k], A[k][k]);
      for (std::size_t j = k; j < r; ++j) A[i][j] = sub(A[i][j], mul(f, A[k][j]));
      b[i] = sub(b[i], mul(f, b[k]));
    }
  }
  std::vector<Expr> z(r);
  for (std::size_t k = r; k-- > 0;) {
    Expr acc = b[k];
    for (std::size_t j = k + 1; j < r; ++j) acc = sub(acc, mul(A[k][j], z[j]));
    z[k] = div(acc, A[k][k]);
  }
  return z;
}

// Newton iteration for the listed slots of x; continues past primal convergence so that
// derivative parts of dual scalars converge as well.
template <class S>
Vec<S> newton_fill(const std::vector<Expr>& res, const std::vector<std::vector<Expr>>& jac, Vec<S> x,
                   const std::vector<int>& slots, const VectorXd& z0) {
  const Eigen::Index m = static_cast<Eigen::Index>(slots.size());
  for (Eigen::Index k = 0; k < m; ++k) x[slots[static_cast<std::size_t>(k)]] = S(z0[k]);
  int extra = 0;
  for (int it = 0; it < 60; ++it) {
    Vec<S> r(m);
    Mat<S> J(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      r[a] = eval(res[static_cast<std::size_t>(a)], x);
      for (Eigen::Index b = 0; b < m; ++b)
        J(a, b) = eval(jac[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)], x);
    }
    Vec<S> step = lu_solve<S>(J, r);
    for (Eigen::Index k = 0; k < m; ++k) x[slots[static_cast<std::size_t>(k)]] -= step[k];
    if (primal(step).norm() <= 1e-14 * (1.0 + primal(x).norm())) {
      if (++extra >= kMaxDualDepth + 1) return x;
    }
  }
  double worst = 0.0;
  for (const auto& e : res) worst = std::max(worst, std::fabs(primal(eval(e, x))));
  if (worst > 1e-10) throw AssumptionFailure("ParametrizationFailure", "momentum elimination did not converge");
  return x;
}

std::vector<VectorXd> random_points(const VectorXd& center, int count, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<VectorXd> out;
  for (int k = 0; k < count; ++k) {
    VectorXd x = center;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += gauss(rng);
    out.push_back(x);
  }
  return out;
}

template <class S> Vec<S> legendre_at(const LagrangianSystem& sys, const Vec<S>& x) {
  Vec<S> y(sys.dim());
  for (int i = 0; i <= sys.n; ++i) y[i] = x[i];
  y.tail(sys.n) = momenta_at(sys, x);
  return y;
}

void build_auto(MomentumChart& c, const VectorXd& seed) {
  const LagrangianSystem& sys = c.sys;
  const int n = sys.n;
  if (!sys.hessian_velocity_free)
    throw AssumptionFailure("AutoEliminateUnsupported",
                            "Hessian depends on the velocities; supply primary constraints in [hamiltonian]");
  c.kept = sys.pivots;
  c.eliminated = sys.nonpivots;
  const std::size_t r = c.kept.size();

  std::vector<Expr> zero_v(static_cast<std::size_t>(sys.dim()));
  for (int i = 0; i < n; ++i) zero_v[static_cast<std::size_t>(sys.v_slot(i))] = constant(0.0);
  auto pvar = [&](int i) { return variable(1 + n + i, momentum_name(i)); };

  std::vector<std::vector<Expr>> A(r, std::vector<Expr>(r));
  std::vector<Expr> rhs(r);
  for (std::size_t k = 0; k < r; ++k) {
    const int P = c.kept[k];
    rhs[k] = sub(pvar(P), substitute(sys.Lv[static_cast<std::size_t>(P)], zero_v));
    for (std::size_t l = 0; l < r; ++l)
      A[k][l] = sys.hess[static_cast<std::size_t>(P)][static_cast<std::size_t>(c.kept[l])];
  }
  std::vector<Expr> vP = r ? solve_symbolic(A, rhs, seed) : std::vector<Expr>{};
  std::vector<Expr> vsub(static_cast<std::size_t>(sys.dim()));
  for (std::size_t k = 0; k < r; ++k) vsub[static_cast<std::size_t>(sys.v_slot(c.kept[k]))] = vP[k];
  for (int N : c.eliminated) vsub[static_cast<std::size_t>(sys.v_slot(N))] = constant(0.0);

  // everything below lives on J1*E (t, q, p)
  std::vector<Expr> phi;
  for (int N : c.eliminated) phi.push_back(substitute(sys.Lv[static_cast<std::size_t>(N)], vsub));
  Expr E = substitute(sys.energy, vsub);

  std::vector<Expr> p_hat(static_cast<std::size_t>(n));
  for (int P : c.kept) p_hat[static_cast<std::size_t>(P)] = pvar(P);
  for (std::size_t j = 0; j < c.eliminated.size(); ++j) p_hat[static_cast<std::size_t>(c.eliminated[j])] = phi[j];

  for (std::size_t j = 0; j < c.eliminated.size(); ++j) {
    Expr xi = sub(pvar(c.eliminated[j]), phi[j]);
    c.primaries.push_back(to_field(xi, c.dim()));
    c.primary_descriptions.push_back(to_string(xi));
  }
  Expr h = E;
  for (int i = 0; i < n; ++i) h = sub(h, mul(c.connection.Y[static_cast<std::size_t>(i)], p_hat[static_cast<std::size_t>(i)]));
  c.h0_description = to_string(h);
  c.energy_ext = to_field(E, c.dim());

  // chart variables: p_kept[k] -> slot 1 + n + k
  std::vector<Expr> to_chart(static_cast<std::size_t>(c.dim()));
  for (std::size_t k = 0; k < r; ++k)
    to_chart[static_cast<std::size_t>(1 + n + c.kept[k])] = variable(static_cast<int>(1 + n + k), momentum_name(c.kept[k]));
  std::vector<Expr> p_chart;
  for (const auto& e : p_hat) p_chart.push_back(substitute(e, to_chart));
  Expr E_chart = substitute(E, to_chart);
  Expr h_chart = substitute(h, to_chart);
  const int cd = c.chart_dim();
  c.energy = to_field(E_chart, cd);
  c.h0 = to_field(h_chart, cd);

  std::vector<Expr> theta(static_cast<std::size_t>(cd), constant(0.0));
  theta[0] = neg(E_chart);
  for (int i = 0; i < n; ++i) theta[static_cast<std::size_t>(1 + i)] = p_chart[static_cast<std::size_t>(i)];
  c.theta_exprs = theta;

  c.embed = VectorField(cd, [p_chart, n](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    Vec<S> x(2 * n + 1);
    for (int i = 0; i <= n; ++i) x[i] = y[i];
    for (int i = 0; i < n; ++i) x[1 + n + i] = eval(p_chart[static_cast<std::size_t>(i)], y);
    return x;
  });
}

void build_user(MomentumChart& c, const VectorXd& seed, const UserPrimaries& user) {
  const LagrangianSystem& sys = c.sys;
  const int n = sys.n;
  const int m = sys.corank;
  if (static_cast<int>(user.constraints.size()) != m)
    throw InputError("expected " + std::to_string(m) + " primary constraints, got " +
                     std::to_string(user.constraints.size()));
  std::vector<Expr> xi;
  for (const auto& s : user.constraints) xi.push_back(parse(s, c.table));
  VectorXd fl_seed = legendre_at<double>(sys, seed);
  MatrixXd Dp(m, n);
  for (int a = 0; a < m; ++a)
    for (int i = 0; i < n; ++i) Dp(a, i) = eval(diff(xi[static_cast<std::size_t>(a)], 1 + n + i), fl_seed);
  PivotSet piv = choose_pivots(Dp);
  if (piv.rank != m) throw AssumptionFailure("ParametrizationFailure", "primaries cannot be solved for momenta");
  c.eliminated = piv.cols;
  for (int i = 0; i < n; ++i)
    if (std::find(c.eliminated.begin(), c.eliminated.end(), i) == c.eliminated.end()) c.kept.push_back(i);

  std::vector<int> slots;
  VectorXd z0(m);
  for (int k = 0; k < m; ++k) {
    slots.push_back(1 + n + c.eliminated[static_cast<std::size_t>(k)]);
    z0[k] = fl_seed[slots.back()];
  }
  std::vector<std::vector<Expr>> J(static_cast<std::size_t>(m));
  for (int a = 0; a < m; ++a)
    for (int s : slots) J[static_cast<std::size_t>(a)].push_back(diff(xi[static_cast<std::size_t>(a)], s));

  for (std::size_t a = 0; a < xi.size(); ++a) {
    c.primaries.push_back(to_field(xi[a], c.dim()));
    c.primary_descriptions.push_back(to_string(xi[a]));
  }
  const int cd = c.chart_dim();
  std::vector<int> kept = c.kept;
  c.embed = VectorField(cd, [xi, J, slots, z0, kept, n](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    Vec<S> x = Vec<S>::Zero(2 * n + 1);
    for (int i = 0; i <= n; ++i) x[i] = y[i];
    for (std::size_t k = 0; k < kept.size(); ++k) x[1 + n + kept[k]] = y[static_cast<Eigen::Index>(1 + n + k)];
    return newton_fill<S>(xi, J, x, slots, z0);
  });

  VectorField embed = c.embed;
  BaseConnection conn = c.connection;
  if (!user.energy.empty()) {
    Expr Eu = parse(user.energy, c.table);
    c.energy = ScalarField(cd, [Eu, embed](const auto& y) {
      using S = typename std::decay_t<decltype(y)>::Scalar;
      return S(eval(Eu, Vec<S>(embed(y))));
    });
  } else {
    // recover the velocity from the pivot momenta, non-pivot velocities set to zero
    std::vector<int> vslots;
    std::vector<Expr> res;
    std::vector<std::vector<Expr>> H;
    VectorXd v0(static_cast<Eigen::Index>(sys.pivots.size()));
    for (std::size_t k = 0; k < sys.pivots.size(); ++k) {
      const int P = sys.pivots[k];
      vslots.push_back(sys.v_slot(P));
      v0[static_cast<Eigen::Index>(k)] = seed[sys.v_slot(P)];
      // Lv_P(t, q, v) - p_P, with p_P stored in an extra slot 2n+1+k
      res.push_back(sub(sys.Lv[static_cast<std::size_t>(P)], variable(2 * n + 1 + static_cast<int>(k), "target")));
      std::vector<Expr> row;
      for (int P2 : sys.pivots) row.push_back(sys.hess[static_cast<std::size_t>(P)][static_cast<std::size_t>(P2)]);
      H.push_back(row);
    }
    Expr energy = sys.energy;
    std::vector<int> pivots = sys.pivots;
    c.energy = ScalarField(cd, [embed, res, H, vslots, v0, energy, pivots, n](const auto& y) {
      using S = typename std::decay_t<decltype(y)>::Scalar;
      Vec<S> p = embed(y);
      Vec<S> x = Vec<S>::Zero(2 * n + 1 + static_cast<Eigen::Index>(pivots.size()));
      for (int i = 0; i <= n; ++i) x[i] = p[i];
      for (std::size_t k = 0; k < pivots.size(); ++k) x[static_cast<Eigen::Index>(2 * n + 1 + k)] = p[1 + n + pivots[k]];
      if (!pivots.empty()) x = newton_fill<S>(res, H, x, vslots, v0);
      return S(eval(energy, x));
    });
  }
  ScalarField E = c.energy;
  c.h0 = ScalarField(cd, [E, embed, conn, n](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    Vec<S> x = embed(y);
    S h = E(y);
    for (int i = 0; i < n; ++i) h -= eval(conn.Y[static_cast<std::size_t>(i)], y) * x[1 + n + i];
    return h;
  });
  c.h0_description = user.energy.empty() ? "energy - Y.p (numerical elimination)" : user.energy + " - Y.p";
}

}  // namespace

MomentumChart build_primary_chart(const LagrangianSystem& sys, ChartMode mode, const BaseConnection& connection,
                                  const VectorXd& lagrangian_seed, const UserPrimaries* user, std::uint64_t rng_seed) {
  MomentumChart c;
  c.n = sys.n;
  c.mode = mode;
  c.sys = sys;
  c.connection = connection.n == sys.n ? connection : BaseConnection::trivial(sys.n);
  c.table = SymbolTable::momentum(sys.n);
  if (mode == ChartMode::AutoEliminate) {
    build_auto(c, lagrangian_seed);
  } else {
    if (!user) throw InputError("user-supplied chart requires primary constraints");
    build_user(c, lagrangian_seed, *user);
  }
  const int n = c.n;
  const int cd = c.chart_dim();
  std::vector<int> kept = c.kept;
  c.project = VectorField(c.dim(), [kept, n, cd](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> y(cd);
    for (int i = 0; i <= n; ++i) y[i] = x[i];
    for (std::size_t k = 0; k < kept.size(); ++k) y[static_cast<Eigen::Index>(1 + n + k)] = x[1 + n + kept[k]];
    return y;
  });
  std::vector<Expr> Lv = sys.Lv;
  c.fl0 = VectorField(sys.dim(), [Lv, kept, n, cd](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> y(cd);
    for (int i = 0; i <= n; ++i) y[i] = x[i];
    for (std::size_t k = 0; k < kept.size(); ++k)
      y[static_cast<Eigen::Index>(1 + n + k)] = eval(Lv[static_cast<std::size_t>(kept[k])], x);
    return y;
  });
  if (!c.energy_ext) {
    ScalarField E = c.energy;
    VectorField proj = c.project;
    c.energy_ext = ScalarField(c.dim(), [E, proj](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return S(E(Vec<S>(proj(x))));
    });
  }

  // image and energy conditions at random Lagrangian points
  for (const auto& x : random_points(lagrangian_seed, 100, 1.0, rng_seed)) {
    VectorXd fl;
    try {
      fl = legendre_at<double>(sys, x);
    } catch (const DomainError&) {
      continue;
    }
    for (const auto& xi : c.primaries) c.image_residual = std::max(c.image_residual, std::fabs(xi(fl)));
    try {
      VectorXd y = c.fl0(x);
      double e = c.energy(y);
      double el = eval(sys.energy, Vec<double>(x));
      c.energy_residual = std::max(c.energy_residual, std::fabs(e - el) / std::max(1.0, std::fabs(el)));
    } catch (const DomainError&) {
    }
  }
  if (c.image_residual > 1e-9)
    throw AssumptionFailure("ImageMismatch", "primary constraints do not vanish on the Legendre image");
  if (c.energy_residual > 1e-8)
    throw AssumptionFailure("ImageMismatch", "Hamiltonian does not pull back to the Lagrangian energy");

  // primaries independent on the image
  if (!c.primaries.empty()) {
    VectorXd fl = legendre_at<double>(sys, lagrangian_seed);
    if (numeric_rank(stacked_gradients<double>(c.primaries, fl)) != static_cast<int>(c.primaries.size()))
      throw AssumptionFailure("RankDrift", "primary constraint Jacobian is rank deficient on the image");
  }
  return c;
}

HamiltonCartanForms hamilton_cartan_forms(const MomentumChart& chart) {
  HamiltonCartanForms f;
  const int d = chart.chart_dim();
  f.dim = d;
  VectorXd e = VectorXd::Zero(d);
  e[0] = 1.0;
  f.eta = constant_vector_field(e);
  if (chart.theta_exprs) {
    const std::vector<Expr>& th = *chart.theta_exprs;
    std::vector<std::vector<Expr>> W(static_cast<std::size_t>(d), std::vector<Expr>(static_cast<std::size_t>(d)));
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        W[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
            sub(diff(th[static_cast<std::size_t>(a)], b), diff(th[static_cast<std::size_t>(b)], a));
    f.theta = VectorField(d, [th, d](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Vec<S> v(d);
      for (int a = 0; a < d; ++a) v[a] = eval(th[static_cast<std::size_t>(a)], x);
      return v;
    });
    f.Omega = MatrixField(d, [W, d](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> M(d, d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) M(a, b) = eval(W[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)], x);
      return M;
    });
    return f;
  }
  const int n = chart.n;
  VectorField embed = chart.embed;
  ScalarField E = chart.energy;
  f.theta = VectorField(d, [embed, E, n, d](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    Vec<S> x = embed(y);
    Vec<S> v = Vec<S>::Zero(d);
    v[0] = -E(y);
    for (int i = 0; i < n; ++i) v[1 + i] = x[1 + n + i];
    return v;
  });
  VectorField theta = f.theta;
  f.Omega = MatrixField(d, [theta](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    Mat<S> J = jacobian<S>(theta, y);  // J(i, j) = d_j theta_i
    return Mat<S>(J - J.transpose());
  });
  return f;
}

double pullback_residual(const MomentumChart& chart, const HamiltonCartanForms& forms, const LagrangianForms& lag,
                         const std::vector<VectorXd>& points) {
  double worst = 0.0;
  for (const auto& x : points) {
    MatrixXd J = jacobian<double>(chart.fl0, x);
    MatrixXd W = forms.Omega(VectorXd(chart.fl0(x)));
    MatrixXd pulled = J.transpose() * W * J;
    worst = std::max(worst, (pulled - MatrixXd(lag.Omega(x))).cwiseAbs().maxCoeff());
  }
  return worst;
}

GeometricProblem hamiltonian_problem(const MomentumChart& chart, const VectorXd& lagrangian_seed) {
  HamiltonCartanForms f = hamilton_cartan_forms(chart);
  const int d = chart.chart_dim();
  std::vector<std::string> coords;
  for (int i = 0; i <= chart.n; ++i) coords.push_back(chart.table.name(i));
  for (int k : chart.kept) coords.push_back(momentum_name(k));
  return make_problem(d, f.Omega, f.eta, lift_connection(chart.connection, d), chart.fl0(lagrangian_seed), coords);
}

AlgorithmReport hamiltonian_algorithm(const MomentumChart& chart, const VectorXd& lagrangian_seed,
                                      const RunOptions& opt) {
  return run(hamiltonian_problem(chart, lagrangian_seed), opt);
}

RelationReport verify_fl_related(const AlgorithmReport& lag, const AlgorithmReport& ham, const MomentumChart& chart,
                                 double tol) {
  RelationReport rr;
  const std::size_t nl = lag.levels.size(), nh = ham.levels.size();
  rr.counts_match = lag.final_level == ham.final_level && lag.status == ham.status;
  if (!rr.counts_match)
    rr.notes.push_back("Lagrangian tower stops at level " + std::to_string(lag.final_level) +
                       ", Hamiltonian tower at level " + std::to_string(ham.final_level));
  for (std::size_t i = 0; i < std::min(nl, nh); ++i) {
    const ConstraintLevel& L = lag.levels[i];
    const ConstraintLevel& H = ham.levels[i];
    if (L.samples.empty() || H.samples.empty()) continue;
    RelationReport::Generation g;
    g.index = static_cast<int>(i);
    g.lagrangian_codim = L.rank;
    g.hamiltonian_codim = H.rank;
    for (const auto& x : L.samples) {
      VectorXd y = chart.fl0(x);
      for (const auto& c : H.constraints) g.pullback_residual = std::max(g.pullback_residual, std::fabs(c.f(y)));
    }
    if (g.lagrangian_codim != g.hamiltonian_codim) {
      rr.counts_match = false;
      rr.notes.push_back("codimension mismatch at level " + std::to_string(i));
    }
    rr.max_residual = std::max(rr.max_residual, g.pullback_residual);
    rr.generations.push_back(g);
  }
  if (lag.dynamics && ham.dynamics) {
    for (const auto& x : lag.final().samples) {
      VectorXd y = chart.fl0(x);
      MatrixXd J = jacobian<double>(chart.fl0, x);
      VectorXd pushed = J * VectorXd(lag.dynamics->X_part(x));
      VectorXd target = ham.dynamics->X_part(y);
      MatrixXd G1 = ham.dynamics->gauge_basis(y);
      MatrixXd G2 = J * MatrixXd(lag.dynamics->gauge_basis(x));
      MatrixXd G(G1.rows(), G1.cols() + G2.cols());
      G << G1, G2;
      VectorXd dlt = pushed - target;
      if (G.cols()) {
        MatrixXd Q = range_basis(G);
        dlt -= Q * (Q.transpose() * dlt);
      }
      rr.pushforward_residual = std::max(rr.pushforward_residual, dlt.cwiseAbs().maxCoeff());
    }
  }
  rr.related = rr.counts_match && rr.max_residual <= tol && rr.pushforward_residual <= tol;
  return rr;
}

// ---------------------------------------------------------------- structure on J1*E

CosymplecticJ1Star build_cosymplectic(const MomentumChart& chart, const BaseConnection& connection) {
  CosymplecticJ1Star s;
  const int n = chart.n, d = chart.dim();
  s.n = n;
  s.connection = connection;
  std::vector<Expr> Y = connection.Y;
  std::vector<std::vector<Expr>> dY(static_cast<std::size_t>(n));  // dY[j][k] = d Y^j / d x_k, k in (t, q)
  for (int j = 0; j < n; ++j)
    for (int k = 0; k <= n; ++k) dY[static_cast<std::size_t>(j)].push_back(diff(Y[static_cast<std::size_t>(j)], k));

  s.theta_tilde = VectorField(d, [Y, n, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> th = Vec<S>::Zero(d);
    for (int i = 0; i < n; ++i) {
      th[1 + i] = x[1 + n + i];
      th[0] -= eval(Y[static_cast<std::size_t>(i)], x) * x[1 + n + i];
    }
    return th;
  });
  s.omega_tilde = MatrixField(d, [Y, dY, n, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> W = Mat<S>::Zero(d, d);
    Vec<S> dYp = Vec<S>::Zero(d);  // d(Y.p)
    for (int j = 0; j < n; ++j) {
      const S pj = x[1 + n + j];
      for (int k = 0; k <= n; ++k) dYp[k] += eval(dY[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)], x) * pj;
      dYp[1 + n + j] = eval(Y[static_cast<std::size_t>(j)], x);
    }
    for (int i = 0; i < n; ++i) {
      W(1 + i, 1 + n + i) += S(1.0);
      W(1 + n + i, 1 + i) -= S(1.0);
    }
    Vec<S> dt = Vec<S>::Zero(d);
    dt[0] = S(1.0);
    return Mat<S>(W + wedge<S>(dYp, dt));
  });
  VectorXd e = VectorXd::Zero(d);
  e[0] = 1.0;
  s.eta = constant_vector_field(e);
  s.R_tilde = VectorField(d, [Y, dY, n, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> R = Vec<S>::Zero(d);
    R[0] = S(1.0);
    for (int i = 0; i < n; ++i) {
      R[1 + i] = eval(Y[static_cast<std::size_t>(i)], x);
      for (int j = 0; j < n; ++j)
        R[1 + n + i] -= x[1 + n + j] * eval(dY[static_cast<std::size_t>(j)][static_cast<std::size_t>(1 + i)], x);
    }
    return R;
  });
  ScalarField E = chart.energy_ext;
  VectorField proj = chart.project, embed = chart.embed;
  s.h = ScalarField(d, [E, Y, proj, embed, n](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> xhat = embed(Vec<S>(proj(x)));  // eliminated momenta replaced by their values on the image
    S h = E(x);
    for (int i = 0; i < n; ++i) h -= eval(Y[static_cast<std::size_t>(i)], x) * xhat[1 + n + i];
    return h;
  });
  return with_hamiltonian(s, s.h);
}

CosymplecticJ1Star with_hamiltonian(CosymplecticJ1Star s, ScalarField h) {
  const int n = s.n, d = s.dim();
  s.h = h;
  std::vector<Expr> Y = s.connection.Y;
  s.theta_h = VectorField(d, [h, Y, n, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> th = Vec<S>::Zero(d);
    th[0] = -h(x);
    for (int i = 0; i < n; ++i) {
      th[1 + i] = x[1 + n + i];
      th[0] -= eval(Y[static_cast<std::size_t>(i)], x) * x[1 + n + i];
    }
    return th;
  });
  MatrixField w = s.omega_tilde;
  s.Omega_h = MatrixField(d, [w, h, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> dt = Vec<S>::Zero(d);
    dt[0] = S(1.0);
    return Mat<S>(Mat<S>(w(x)) + wedge<S>(gradient<S>(h, x), dt));
  });
  return s;
}

namespace {

template <class S> Vec<S> sharp_at(const CosymplecticJ1Star& s, const Vec<S>& x, const Vec<S>& alpha) {
  return poisson_sharp<S>(structure_at<S>(s, x), alpha);
}

template <class S> S bracket_at(const CosymplecticJ1Star& s, const ScalarField& F, const ScalarField& G, const Vec<S>& x) {
  Vec<S> dF = gradient<S>(F, x), dG = gradient<S>(G, x);
  return dF.dot(sharp_at<S>(s, x, dG));
}

}  // namespace

VectorField hamiltonian_field(const CosymplecticJ1Star& s, const ScalarField& F) {
  return VectorField(s.dim(), [s, F](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return sharp_at<S>(s, x, gradient<S>(F, x));
  });
}

ScalarField poisson_bracket(const CosymplecticJ1Star& s, const ScalarField& F, const ScalarField& G) {
  return ScalarField(s.dim(), [s, F, G](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return bracket_at<S>(s, F, G, x);
  });
}

VectorField evolution_field(const CosymplecticJ1Star& s) {
  return VectorField(s.dim(), [s](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return Vec<S>(Vec<S>(s.R_tilde(x)) + sharp_at<S>(s, x, gradient<S>(s.h, x)));
  });
}

// ---------------------------------------------------------------- classification

std::vector<ScalarField> final_constraints_j1star(const MomentumChart& chart, const AlgorithmReport& ham,
                                                  std::vector<std::string>* descriptions) {
  std::vector<ScalarField> out = chart.primaries;
  if (descriptions) *descriptions = chart.primary_descriptions;
  VectorField proj = chart.project;
  for (const auto& c : ham.final().constraints) {
    ScalarField f = c.f;
    out.push_back(ScalarField(chart.dim(), [f, proj](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return S(f(Vec<S>(proj(x))));
    }));
    if (descriptions) descriptions->push_back("Hamiltonian " + c.description);
  }
  return out;
}

namespace {

struct PointData {
  MatrixXd grads;   // rows: gradients of the constraints
  MatrixXd fields;  // columns: Hamiltonian fields of the constraints
  MatrixXd C;       // C(a, b) = {chi_a, chi_b}
};

PointData point_data(const CosymplecticJ1Star& s, const std::vector<ScalarField>& cs, const VectorXd& x) {
  PointData pd;
  const Eigen::Index k = static_cast<Eigen::Index>(cs.size());
  pd.grads = stacked_gradients<double>(cs, x);
  pd.fields.resize(x.size(), k);
  for (Eigen::Index a = 0; a < k; ++a) pd.fields.col(a) = sharp_at<double>(s, x, VectorXd(pd.grads.row(a).transpose()));
  pd.C = pd.grads * pd.fields;
  return pd;
}

int rank_of_rows(const MatrixXd& C, const std::vector<int>& rows) {
  if (rows.empty()) return 0;
  MatrixXd R(static_cast<Eigen::Index>(rows.size()), C.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) R.row(static_cast<Eigen::Index>(i)) = C.row(rows[i]);
  return numeric_rank(R);
}

}  // namespace

DiracContext classify_constraints(const CosymplecticJ1Star& s, const MomentumChart& chart, const AlgorithmReport& ham,
                                  const Tolerances& tol) {
  if (ham.status != Termination::Final)
    throw AssumptionFailure("NotFinal", "classification needs a final Hamiltonian constraint manifold");
  DiracContext ctx;
  ctx.structure = s;
  ctx.constraints = final_constraints_j1star(chart, ham, &ctx.descriptions);
  for (const auto& y : ham.final().samples) ctx.samples.push_back(chart.embed(y));
  const int K = static_cast<int>(ctx.constraints.size());
  const int m0 = static_cast<int>(chart.primaries.size());
  if (K == 0) return ctx;

  PointData pd = point_data(s, ctx.constraints, ctx.samples.front());
  const MatrixXd& C = pd.C;
  ctx.step1_rank = m0 ? numeric_rank(C.topLeftCorner(m0, m0), tol) : 0;
  ctx.step2_rank = m0 ? numeric_rank(C.topRows(m0), tol) : 0;
  ctx.step3_rank = numeric_rank(C, tol);

  // primaries first, then later generations; a maximal independent row set gives a regular principal block
  std::vector<int> sel;
  for (int a = 0; a < K; ++a) {
    std::vector<int> trial = sel;
    trial.push_back(a);
    if (rank_of_rows(C, trial) > rank_of_rows(C, sel)) sel.push_back(a);
  }
  ctx.second_class_index = sel;
  const Eigen::Index k = static_cast<Eigen::Index>(sel.size());
  auto sub_block = [&](const MatrixXd& M) {
    MatrixXd B(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) B(i, j) = M(sel[static_cast<std::size_t>(i)], sel[static_cast<std::size_t>(j)]);
    return B;
  };
  for (const auto& x : ctx.samples) {
    PointData q = point_data(s, ctx.constraints, x);
    if (numeric_rank(q.C, tol) != ctx.step3_rank)
      throw AssumptionFailure("RankDrift", "bracket matrix of the final constraints changes rank across samples");
    if (k > 0) {
      double rc = reciprocal_condition(sub_block(q.C));
      ctx.min_rcond = std::min(ctx.min_rcond, rc);
      if (rc < 1e-8) throw AssumptionFailure("CbarSingular", "second-class bracket matrix is singular at a sample");
    }
  }

  for (int a : sel) {
    ctx.second_class.push_back(ctx.constraints[static_cast<std::size_t>(a)]);
    ctx.second_class_descriptions.push_back(ctx.descriptions[static_cast<std::size_t>(a)]);
  }
  std::vector<ScalarField> bars = ctx.second_class;
  ctx.Cbar = MatrixField(s.dim(), [s, bars](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    const Eigen::Index m = static_cast<Eigen::Index>(bars.size());
    Mat<S> G(m, x.size());
    for (Eigen::Index a = 0; a < m; ++a) G.row(a) = gradient<S>(bars[static_cast<std::size_t>(a)], x).transpose();
    Mat<S> X(x.size(), m);
    for (Eigen::Index a = 0; a < m; ++a) X.col(a) = sharp_at<S>(s, x, Vec<S>(G.row(a).transpose()));
    return Mat<S>(G * X);
  });

  // first-class combinations chi_j + (Cbar^-1 b)_a Xbar_a with b_g = {chi_j, Xbar_g}
  for (int j = 0; j < K; ++j) {
    if (std::find(sel.begin(), sel.end(), j) != sel.end()) continue;
    ScalarField chi = ctx.constraints[static_cast<std::size_t>(j)];
    if (bars.empty()) {
      ctx.first_class.push_back(chi);
    } else {
      MatrixField Cb = ctx.Cbar;
      ctx.first_class.push_back(ScalarField(s.dim(), [s, bars, chi, Cb](const auto& x) {
        using S = typename std::decay_t<decltype(x)>::Scalar;
        const Eigen::Index m = static_cast<Eigen::Index>(bars.size());
        Vec<S> dchi = gradient<S>(chi, x);
        Vec<S> b(m), vals(m);
        for (Eigen::Index g = 0; g < m; ++g) {
          Vec<S> X = sharp_at<S>(s, x, gradient<S>(bars[static_cast<std::size_t>(g)], x));
          b[g] = dchi.dot(X);
          vals[g] = bars[static_cast<std::size_t>(g)](x);
        }
        Vec<S> c = lu_solve<S>(Mat<S>(Cb(x)), b);
        return S(chi(x) + c.dot(vals));
      }));
    }
    ctx.first_class_descriptions.push_back(ctx.descriptions[static_cast<std::size_t>(j)] +
                                           (bars.empty() ? "" : " (corrected by second-class terms)"));
  }

  for (const auto& x : ctx.samples) {
    MatrixXd all = stacked_gradients<double>(ctx.constraints, x);
    std::vector<ScalarField> basis = ctx.second_class;
    basis.insert(basis.end(), ctx.first_class.begin(), ctx.first_class.end());
    MatrixXd mine = stacked_gradients<double>(basis, x);
    ctx.span_residual = std::max({ctx.span_residual, containment_residual(all.transpose(), mine.transpose(), tol),
                                  containment_residual(mine.transpose(), all.transpose(), tol)});
    if (!ctx.first_class.empty()) {
      PointData q = point_data(s, basis, x);
      const Eigen::Index nf = static_cast<Eigen::Index>(ctx.first_class.size());
      ctx.first_class_residual = std::max(ctx.first_class_residual, q.C.bottomRows(nf).cwiseAbs().maxCoeff());
    }
  }
  return ctx;
}

namespace {

// Hamiltonian fields of the second-class constraints, their gradients and the inverse bracket matrix.
template <class S> struct SecondClassData {
  Mat<S> grads;   // rows
  Mat<S> fields;  // columns
  Mat<S> inv;
};

template <class S> SecondClassData<S> second_class_data(const DiracContext& ctx, const Vec<S>& x) {
  SecondClassData<S> d;
  const Eigen::Index m = static_cast<Eigen::Index>(ctx.second_class.size());
  d.grads.resize(m, x.size());
  d.fields.resize(x.size(), m);
  for (Eigen::Index a = 0; a < m; ++a) {
    d.grads.row(a) = gradient<S>(ctx.second_class[static_cast<std::size_t>(a)], x).transpose();
    d.fields.col(a) = sharp_at<S>(ctx.structure, x, Vec<S>(d.grads.row(a).transpose()));
  }
  Mat<S> C = d.grads * d.fields;
  if (primal(C).size() && reciprocal_condition(primal(C)) < 1e-12)
    throw AssumptionFailure("CbarSingular", "second-class bracket matrix is singular at the evaluation point");
  d.inv = lu_inverse<S>(C);
  return d;
}

template <class S> Vec<S> projected_evolution_at(const DiracContext& ctx, const Vec<S>& x) {
  Vec<S> E = Vec<S>(ctx.structure.R_tilde(x)) + sharp_at<S>(ctx.structure, x, gradient<S>(ctx.structure.h, x));
  if (ctx.second_class.empty()) return E;
  SecondClassData<S> d = second_class_data<S>(ctx, x);
  return Vec<S>(E - d.fields * (d.inv * (d.grads * E)));
}

}  // namespace

ScalarField dirac_bracket(const DiracContext& ctx, const ScalarField& F, const ScalarField& G) {
  return ScalarField(ctx.structure.dim(), [ctx, F, G](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> dF = gradient<S>(F, x), dG = gradient<S>(G, x);
    Vec<S> XG = sharp_at<S>(ctx.structure, x, dG);
    S base = dF.dot(XG);
    if (ctx.second_class.empty()) return base;
    SecondClassData<S> d = second_class_data<S>(ctx, x);
    Vec<S> F_bar = d.fields.transpose() * dF;  // {F, Xbar_b}
    Vec<S> bar_G = d.grads * XG;               // {Xbar_a, G}
    return S(base + bar_G.dot(d.inv * F_bar));
  });
}

MatrixXd projector_Q(const DiracContext& ctx, const VectorXd& x) {
  const Eigen::Index d = x.size();
  if (ctx.second_class.empty()) return MatrixXd::Zero(d, d);
  SecondClassData<double> sd = second_class_data<double>(ctx, x);
  return sd.fields * sd.inv * sd.grads;
}

MatrixXd projector_P(const DiracContext& ctx, const VectorXd& x) {
  return MatrixXd::Identity(x.size(), x.size()) - projector_Q(ctx, x);
}

ScalarField evolution(const DiracContext& ctx, const ScalarField& g) {
  return ScalarField(ctx.structure.dim(), [ctx, g](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return S(gradient<S>(g, x).dot(projected_evolution_at<S>(ctx, x)));
  });
}

VectorXd projected_evolution(const DiracContext& ctx, const VectorXd& x) { return projected_evolution_at<double>(ctx, x); }

VectorXd pushed_dynamics(const MomentumChart& chart, const DynamicsSolution& dyn, const VectorXd& chart_point) {
  return jacobian<double>(chart.embed, chart_point) * VectorXd(dyn.X_part(chart_point));
}

// ---------------------------------------------------------------- worked-example checks

ClosedBracketCheck time_extended_bracket_check(const DiracContext& ctx) {
  ClosedBracketCheck out;
  if (ctx.second_class.empty()) {
    out.detail = "no second-class constraints";
    return out;
  }
  const int n = ctx.structure.n, d = ctx.structure.dim();
  std::vector<ScalarField> coords;
  for (int i = 1; i < d; ++i) coords.push_back(coordinate_field(d, i));
  const std::size_t count = std::min<std::size_t>(ctx.samples.size(), 10);
  for (std::size_t s = 0; s < count; ++s) {
    const VectorXd& x = ctx.samples[s];
    SecondClassData<double> sd = second_class_data<double>(ctx, x);
    const Eigen::Index m = sd.grads.rows();
    VectorXd a = sd.grads.col(0);  // d Xbar / dt
    if (a.cwiseAbs().maxCoeff() > 1e-12) out.time_dependent = true;
    MatrixXd Cb = sd.grads * sd.fields;
    MatrixXd Cal = Cb + a * a.transpose();
    VectorXd Ia = sd.inv * a;
    MatrixXd stated = sd.inv + Ia * Ia.transpose();
    out.inverse_residual =
        std::max(out.inverse_residual, (Cal * stated - MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff());

    const MatrixXd readings[3] = {Cal, stated, stated.transpose()};
    for (const auto& F : coords) {
      for (const auto& G : coords) {
        VectorXd dF = gradient<double>(F, x), dG = gradient<double>(G, x);
        VectorXd XF = sharp_at<double>(ctx.structure, x, dF), XG = sharp_at<double>(ctx.structure, x, dG);
        const double base = dF.dot(XG);
        const double general = dirac_bracket(ctx, F, G)(x);
        VectorXd bar_G = sd.grads * XG;  // {Xbar_b, G}
        VectorXd bar_F = sd.grads * XF;  // {Xbar_b, F}
        double mism[3];
        for (int r = 0; r < 3; ++r) {
          const MatrixXd& M = readings[r];
          double v = base - bar_F.dot(M * bar_G);
          VectorXd Ma = M.transpose() * a;  // sum_alpha M_ab a_alpha
          v -= bar_F.dot(Ma) * bar_G.dot(Ma);
          mism[r] = std::fabs(v - general);
        }
        out.literal_mismatch = std::max(out.literal_mismatch, mism[0]);
        out.inverse_mismatch = std::max(out.inverse_mismatch, mism[1]);
        out.transposed_mismatch = std::max(out.transposed_mismatch, mism[2]);
      }
    }
  }
  (void)n;
  out.detail = "closed display compared with the general Dirac bracket on coordinate pairs at " +
               std::to_string(count) + " final samples";
  return out;
}

AffineChecks affine_checks(const DiracContext& ctx, const MomentumChart& chart, const AlgorithmReport& ham) {
  AffineChecks out;
  const LagrangianSystem& sys = chart.sys;
  const int n = sys.n;
  if (sys.corank != n) return out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!is_constant(sys.hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 0.0)) return out;
  std::vector<Expr> at_rest(static_cast<std::size_t>(sys.dim()));
  for (int k = 0; k < n; ++k) at_rest[static_cast<std::size_t>(sys.v_slot(k))] = constant(0.0);
  std::vector<Expr> g;
  for (int i = 0; i < n; ++i) g.push_back(substitute(sys.Lv[static_cast<std::size_t>(i)], at_rest));
  Expr g0 = substitute(sys.L, at_rest);
  out.applicable = true;

  // all expressions are over (t, q): slots shared by J1E, J1*E and the chart
  auto gamma_matrix = [&](const VectorXd& x) {
    MatrixXd G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        G(i, j) = eval(diff(g[static_cast<std::size_t>(j)], 1 + i), Vec<double>(x)) -
                  eval(diff(g[static_cast<std::size_t>(i)], 1 + j), Vec<double>(x));
    return G;
  };
  auto dgamma = [&](const VectorXd& x) {  // D(i, k) = d gamma_i / d q_k
    MatrixXd D(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) D(i, k) = eval(diff(g[static_cast<std::size_t>(i)], 1 + k), Vec<double>(x));
    return D;
  };

  for (const auto& x : ctx.samples) {
    MatrixXd G = gamma_matrix(x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double b = bracket_at<double>(ctx.structure, chart.primaries[static_cast<std::size_t>(i)],
                                      chart.primaries[static_cast<std::size_t>(j)], x);
        out.bracket_matrix_residual = std::max(out.bracket_matrix_residual, std::fabs(b - G(i, j)));
      }
  }

  if (ham.dynamics) {
    for (const auto& y : ham.final().samples) {
      MatrixXd Ginv = lu_inverse<double>(gamma_matrix(y));
      VectorXd c(n);
      for (int i = 0; i < n; ++i)
        c[i] = eval(diff(g0, 1 + i), Vec<double>(y)) - eval(diff(g[static_cast<std::size_t>(i)], 0), Vec<double>(y));
      VectorXd formula = 0.5 * (Ginv.transpose() * c);  // R^j = 1/2 gamma^{ij} c_i
      VectorXd X = ham.dynamics->X_part(y);
      VectorXd Xq = X.segment(1, n);
      out.reeb_formula_mismatch = std::max(out.reeb_formula_mismatch, (formula - Xq).cwiseAbs().maxCoeff());
      out.reeb_formula_doubled_mismatch =
          std::max(out.reeb_formula_doubled_mismatch, (2.0 * formula - Xq).cwiseAbs().maxCoeff());
    }
  }

  const int d = chart.dim();
  for (const auto& x : ctx.samples) {
    MatrixXd Ginv = lu_inverse<double>(gamma_matrix(x));
    MatrixXd D = dgamma(x);
    for (int a = 1; a < d; ++a) {
      for (int b = 1; b < d; ++b) {
        ScalarField F = coordinate_field(d, a), G = coordinate_field(d, b);
        const double general = dirac_bracket(ctx, F, G)(x);
        VectorXd Fq = VectorXd::Zero(n), Fp = VectorXd::Zero(n), Gq = VectorXd::Zero(n), Gp = VectorXd::Zero(n);
        (a <= n ? Fq[a - 1] : Fp[a - 1 - n]) = 1.0;
        (b <= n ? Gq[b - 1] : Gp[b - 1 - n]) = 1.0;
        const double canon = Fq.dot(Gp) - Fp.dot(Gq);
        VectorXd lf = Fq + D * Fp;    // dF/dq_i + d gamma_i/dq_k dF/dp_k
        VectorXd lit = Gq + D * Fp;   // literal last factor
        VectorXd fixed = Gq + D * Gp;
        const double literal = canon - lf.dot(Ginv * lit);
        const double g_fixed = canon - lf.dot(Ginv * fixed);
        const double corrected = canon - lf.dot(Ginv.transpose() * fixed);
        out.closed_literal_mismatch = std::max(out.closed_literal_mismatch, std::fabs(literal - general));
        out.closed_g_fixed_mismatch = std::max(out.closed_g_fixed_mismatch, std::fabs(g_fixed - general));
        out.closed_corrected_mismatch = std::max(out.closed_corrected_mismatch, std::fabs(corrected - general));
      }
    }
  }
  if (out.reeb_formula_mismatch > 1e-9)
    out.warnings.push_back("closed-form Reeb formula with factor 1/2 differs from the computed dynamics by " +
                           describe_vector(VectorXd::Constant(1, out.reeb_formula_mismatch)) +
                           "; without the factor the mismatch is " +
                           describe_vector(VectorXd::Constant(1, out.reeb_formula_doubled_mismatch)));
  if (out.closed_literal_mismatch > 1e-9)
    out.warnings.push_back("closed-form Dirac bracket (dF/dp in the last factor) differs from the general formula by " +
                           describe_vector(VectorXd::Constant(1, out.closed_literal_mismatch)) +
                           "; with dG/dp: " + describe_vector(VectorXd::Constant(1, out.closed_g_fixed_mismatch)) +
                           "; with dG/dp and transposed inverse: " +
                           describe_vector(VectorXd::Constant(1, out.closed_corrected_mismatch)));
  return out;
}

}  // namespace jetflow
