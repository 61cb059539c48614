#include "jetflow/jet_geometry.hpp"

#include <algorithm>
#include <random>

namespace jetflow {

LagrangianSystem make_system(int n, const std::string& lagrangian, const VectorXd& seed,
                             const Tolerances& tol, std::uint64_t rng_seed) {
  SymbolTable table = SymbolTable::lagrangian(n);
  return make_system(n, parse(lagrangian, table), seed, tol, rng_seed);
}

LagrangianSystem make_system(int n, const Expr& lagrangian, const VectorXd& seed,
                             const Tolerances& tol, std::uint64_t rng_seed) {
  if (n < 1) throw InputError("fiber dimension must be positive");
  LagrangianSystem sys;
  sys.n = n;
  sys.table = SymbolTable::lagrangian(n);
  sys.L = lagrangian;
  if (seed.size() != sys.dim()) throw InputError("seed must have 2n+1 entries");

  for (int r = 0; r < n; ++r) {
    sys.Lv.push_back(diff(sys.L, sys.v_slot(r)));
    sys.Lq.push_back(diff(sys.L, sys.q_slot(r)));
  }
  sys.hess.assign(static_cast<std::size_t>(n), {});
  sys.mixed_q.assign(static_cast<std::size_t>(n), {});
  for (int r = 0; r < n; ++r) {
    for (int s = 0; s < n; ++s) {
      sys.hess[r].push_back(diff(sys.Lv[r], sys.v_slot(s)));
      sys.mixed_q[r].push_back(diff(sys.Lv[r], sys.q_slot(s)));
    }
    sys.mixed_t.push_back(diff(sys.Lv[r], sys.t_slot()));
  }
  Expr vLv = constant(0.0);
  for (int r = 0; r < n; ++r) vLv = add(vLv, mul(variable(sys.v_slot(r), sys.table.name(sys.v_slot(r))), sys.Lv[r]));
  sys.energy = sub(vLv, sys.L);

  sys.hessian_velocity_free = true;
  for (int r = 0; r < n; ++r)
    for (int s = 0; s < n; ++s)
      for (int k = 0; k < n; ++k)
        if (depends_on(sys.hess[r][s], sys.v_slot(k))) sys.hessian_velocity_free = false;

  MatrixXd H0 = hessian_at<double>(sys, seed);
  PivotSet piv = choose_pivots(H0, tol);
  sys.corank = n - piv.rank;
  sys.regularity = sys.corank == 0 ? Regularity::Regular : Regularity::Singular;
  sys.pivots = piv.cols;
  for (int i = 0; i < n; ++i)
    if (std::find(piv.cols.begin(), piv.cols.end(), i) == piv.cols.end()) sys.nonpivots.push_back(i);
  sys.pivot_rcond = piv.rcond;
  if (piv.rank > 0 && piv.rcond < tol.pivot_rcond)
    throw AssumptionFailure("PivotDegeneracy", "Hessian pivot block badly conditioned at the seed");

  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int checked = 0;
  for (int k = 0; k < 100; ++k) {
    VectorXd x = seed;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += gauss(rng);
    MatrixXd H;
    try {
      H = hessian_at<double>(sys, x);
    } catch (const DomainError&) {
      continue;
    }
    ++checked;
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, H.cwiseAbs().maxCoeff()))
      throw AssumptionFailure("HessianAsymmetric", "symbolic Hessian is not symmetric");
    int r = numeric_rank(H, tol);
    if (r != piv.rank)
      throw AssumptionFailure("RankDrift", "Hessian rank " + std::to_string(r) + " at a sample differs from rank " +
                                               std::to_string(piv.rank) + " at the seed (mixed-rank Lagrangian)");
  }
  (void)checked;
  return sys;
}

LagrangianForms build_forms(const LagrangianSystem& sys) {
  const int n = sys.n, d = sys.dim();
  std::vector<std::vector<Expr>> M(static_cast<std::size_t>(d), std::vector<Expr>(static_cast<std::size_t>(d), constant(0.0)));
  auto put = [&](int a, int b, const Expr& c) {  // c da ^ db
    M[a][b] = add(M[a][b], c);
    M[b][a] = sub(M[b][a], c);
  };
  auto vvar = [&](int r) { return variable(sys.v_slot(r), sys.table.name(sys.v_slot(r))); };

  for (int r = 0; r < n; ++r) {
    for (int s = 0; s < n; ++s) {
      put(sys.v_slot(s), sys.q_slot(r), neg(sys.hess[r][s]));     // dv ^ dq block
      put(sys.q_slot(s), sys.q_slot(r), neg(sys.mixed_q[r][s]));  // dq ^ dq block
    }
  }
  for (int s = 0; s < n; ++s) {
    Expr vt = constant(0.0), qt = constant(0.0);
    for (int r = 0; r < n; ++r) {
      vt = add(vt, mul(vvar(r), sys.hess[r][s]));
      qt = add(qt, mul(vvar(r), sys.mixed_q[r][s]));
    }
    put(sys.v_slot(s), sys.t_slot(), vt);                                         // dv ^ dt block
    put(sys.q_slot(s), sys.t_slot(), add(sub(qt, sys.Lq[s]), sys.mixed_t[s]));    // dq ^ dt block
  }

  LagrangianForms f;
  f.omega_entries = M;
  f.Omega = MatrixField(d, [M, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> W(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) W(a, b) = eval(M[a][b], x);
    return W;
  });
  std::vector<Expr> th(static_cast<std::size_t>(d), constant(0.0));
  th[0] = neg(sys.energy);
  for (int r = 0; r < n; ++r) th[sys.q_slot(r)] = sys.Lv[r];
  f.theta = VectorField(d, [th, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> v(d);
    for (int a = 0; a < d; ++a) v[a] = eval(th[a], x);
    return v;
  });
  VectorXd e = VectorXd::Zero(d);
  e[0] = 1.0;
  f.eta = constant_vector_field(e);
  f.energy = to_field(sys.energy, d);
  return f;
}

double pfaffian(const MatrixXd& A) {
  const Eigen::Index m = A.rows();
  if (m == 0) return 1.0;
  if (m % 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index j = 1; j < m; ++j) {
    if (A(0, j) == 0.0) continue;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 1; k < m; ++k)
      if (k != j) keep.push_back(k);
    MatrixXd sub(m - 2, m - 2);
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = 0; b < keep.size(); ++b) sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = A(keep[a], keep[b]);
    double sign = (j % 2 == 1) ? 1.0 : -1.0;
    sum += sign * A(0, j) * pfaffian(sub);
  }
  return sum;
}

double volume_coefficient(const LagrangianForms& forms, int n, const VectorXd& x) {
  MatrixXd W = forms.Omega(x);
  VectorXd eta = forms.eta(x);
  // eta = c dt: only the (q, v) block of Omega survives the wedge.
  double fact = 1.0;
  for (int k = 2; k <= n; ++k) fact *= k;
  return eta[0] * fact * pfaffian(W.bottomRightCorner(2 * n, 2 * n));
}

VectorField canonical_endomorphism(int n, const VectorField& X) {
  return VectorField(2 * n + 1, [n, X](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return canonical_endomorphism<S>(n, x, Vec<S>(X(x)));
  });
}

bool is_sode(int n, const VectorField& X, const std::vector<VectorXd>& pts, double tol) {
  for (const auto& x : pts) {
    VectorXd v = X(x);
    if (canonical_endomorphism<double>(n, x, v).cwiseAbs().maxCoeff() > tol) return false;
    if (std::fabs(v[0] - 1.0) > tol) return false;
  }
  return true;
}

VectorField default_sode_connection(int n) {
  return VectorField(2 * n + 1, [n](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> Y = Vec<S>::Zero(2 * n + 1);
    Y[0] = S(1.0);
    for (int r = 0; r < n; ++r) Y[1 + r] = x[1 + n + r];
    return Y;
  });
}

VectorField legendre_map(const LagrangianSystem& sys) {
  const int n = sys.n;
  std::vector<Expr> Lv = sys.Lv;
  return VectorField(sys.dim(), [n, Lv](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> y(2 * n + 1);
    for (int i = 0; i <= n; ++i) y[i] = x[i];
    for (int r = 0; r < n; ++r) y[1 + n + r] = eval(Lv[r], x);
    return y;
  });
}

VectorField legendre_map_extended(const LagrangianSystem& sys) {
  const int n = sys.n;
  std::vector<Expr> Lv = sys.Lv;
  Expr E = sys.energy;
  return VectorField(sys.dim(), [n, Lv, E](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> y(2 * n + 2);
    for (int i = 0; i <= n; ++i) y[i] = x[i];
    for (int r = 0; r < n; ++r) y[1 + n + r] = eval(Lv[r], x);
    y[2 * n + 1] = -eval(E, x);
    return y;
  });
}

BaseConnection BaseConnection::trivial(int n) {
  BaseConnection c;
  c.n = n;
  c.Y.assign(static_cast<std::size_t>(n), constant(0.0));
  return c;
}

BaseConnection BaseConnection::from_strings(int n, const std::vector<std::string>& components) {
  if (static_cast<int>(components.size()) != n)
    throw InputError("connection needs " + std::to_string(n) + " components");
  BaseConnection c;
  c.n = n;
  SymbolTable table = SymbolTable::configuration(n);
  for (const auto& s : components) c.Y.push_back(jetflow::parse(s, table));
  return c;
}

bool BaseConnection::is_trivial() const {
  for (const auto& y : Y)
    if (!is_constant(y, 0.0)) return false;
  return true;
}

VectorField lift_connection(const BaseConnection& c, int dim) {
  std::vector<Expr> Y = c.Y;
  return VectorField(dim, [Y, dim](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> out = Vec<S>::Zero(dim);
    out[0] = S(1.0);
    for (std::size_t i = 0; i < Y.size(); ++i) out[static_cast<Eigen::Index>(1 + i)] = eval(Y[i], x);
    return out;
  });
}

std::vector<VectorXd> ker_fl_basis(const LagrangianSystem& sys, const VectorXd& x, const Tolerances& tol) {
  if (!sys.pivots.empty()) {
    MatrixXd H = hessian_at<double>(sys, x);
    double rc = reciprocal_condition(select<double>(H, sys.pivots, sys.pivots));
    if (rc < tol.pivot_rcond) throw AssumptionFailure("PivotDegeneracy", "Hessian pivot block degenerates at a sample");
  }
  MatrixXd W = ker_fl_matrix<double>(sys, x);
  std::vector<VectorXd> out;
  for (Eigen::Index j = 0; j < W.cols(); ++j) out.push_back(W.col(j));
  return out;
}

MatrixField ker_fl_field(const LagrangianSystem& sys) {
  return MatrixField(sys.dim(), [sys](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return ker_fl_matrix<S>(sys, x);
  });
}

}  // namespace jetflow
