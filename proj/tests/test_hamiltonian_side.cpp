#include <doctest.h>

#include <cmath>
#include <map>

#include "jetflow/hamiltonian_side.hpp"
#include "jetflow/pipeline.hpp"
#include "test_support.hpp"

using namespace jetflow;
using namespace testing_support;

namespace {

const Analysis& analysis(const std::string& name) {
  static std::map<std::string, Analysis> cache;
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, run_analysis(load_spec(system_file(name)))).first;
  return it->second;
}

// Canonical Poisson matrix on (t, q, p): {q_i, p_j} = delta_ij, t is a Casimir.
MatrixXd canonical_poisson(int n) {
  MatrixXd J = MatrixXd::Zero(2 * n + 1, 2 * n + 1);
  for (int i = 0; i < n; ++i) {
    J(1 + i, 1 + n + i) = 1.0;
    J(1 + n + i, 1 + i) = -1.0;
  }
  return J;
}

VectorXd central_gradient(const ScalarField& f, const VectorXd& x, double h = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    VectorXd a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

// Dirac bivector J - J dX^T (dX J dX^T)^-1 dX J from finite-difference gradients of the constraints.
MatrixXd dirac_bivector(const std::vector<ScalarField>& cs, const VectorXd& x, int n) {
  MatrixXd J = canonical_poisson(n);
  MatrixXd G(static_cast<Eigen::Index>(cs.size()), x.size());
  for (std::size_t a = 0; a < cs.size(); ++a) G.row(static_cast<Eigen::Index>(a)) = central_gradient(cs[a], x).transpose();
  if (G.rows() == 0) return J;
  MatrixXd C = G * J * G.transpose();
  return J - J * G.transpose() * C.inverse() * G * J;
}

// Exterior derivative (d theta)_ij = d_i theta_j - d_j theta_i by central differences.
MatrixXd fd_exterior(const VectorField& theta, const VectorXd& x, double h = 1e-6) {
  const Eigen::Index d = x.size();
  MatrixXd D(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    D.row(i) = ((VectorXd(theta(a)) - VectorXd(theta(b))) / (2 * h)).transpose();
  }
  return D - D.transpose();
}

ScalarField product(const ScalarField& f, const ScalarField& g) {
  return ScalarField(f.arity(), [f, g](const auto& x) { return f(x) * g(x); });
}

ScalarField linear_plus_square(int d, const VectorXd& a, const VectorXd& b) {
  return ScalarField(d, [a, b](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    S l = S(0.0), m = S(0.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      l += a[i] * x[i];
      m += b[i] * x[i];
    }
    return S(l + m * m + sin(x[1]));
  });
}

// Points of the final manifold p2 = 0, p1 = q2 of qv in J1*E.
VectorXd qv_final_point(Rng& rng) {
  VectorXd x = VectorXd::Zero(5);
  x.head(3) = rng.vec(3, 0.7);
  x[3] = x[2];
  return x;
}

// Points of the final manifold p1 = q2, p2 = -q1 of the affine example.
VectorXd affine_final_point(Rng& rng) {
  VectorXd x = VectorXd::Zero(5);
  x.head(3) = rng.vec(3, 0.7);
  x[3] = x[2];
  x[4] = -x[1];
  return x;
}

}  // namespace

TEST_CASE("primary charts of the bundled systems") {
  const Analysis& qv = analysis("qv");
  REQUIRE(qv.chart);
  const MomentumChart& c = *qv.chart;
  CHECK(c.kept == std::vector<int>{0});
  CHECK(c.eliminated == std::vector<int>{1});
  CHECK(c.primaries.size() == 1);
  CHECK(c.chart_dim() == 4);
  Rng rng(101);
  for (int k = 0; k < 20; ++k) {
    VectorXd y = rng.vec(4, 0.8);
    const double e = 0.5 * (y[3] - y[2]) * (y[3] - y[2]);
    CHECK(std::fabs(c.energy(y) - e) <= 1e-12);
    VectorXd x = c.embed(y);
    CHECK(x[4] == 0.0);
    CHECK((VectorXd(c.project(x)) - y).norm() <= 1e-14);
    CHECK(std::fabs(c.primaries[0](x)) <= 1e-14);
    VectorXd z = rng.vec(5, 0.8);
    CHECK(std::fabs(std::fabs(c.primaries[0](z)) - std::fabs(z[4])) <= 1e-14);
  }
  CHECK(c.image_residual <= 1e-12);
  CHECK(c.energy_residual <= 1e-12);

  const Analysis& af = analysis("affine");
  REQUIRE(af.chart);
  CHECK(af.chart->kept.empty());
  CHECK(af.chart->primaries.size() == 2);
  for (int k = 0; k < 20; ++k) {
    VectorXd z = rng.vec(5, 0.8);
    bool on = true;
    for (const auto& f : af.chart->primaries) on = on && std::fabs(f(affine_final_point(rng))) <= 1e-14;
    CHECK(on);
    // primaries span {p1 - q2, p2 + q1}
    MatrixXd G = stacked_gradients<double>(af.chart->primaries, z);
    MatrixXd expect(2, 5);
    expect << 0, 0, -1, 1, 0, 0, 1, 0, 0, 1;
    CHECK(subspace_gap(G.transpose(), expect.transpose()) <= 1e-12);
  }

  const Analysis& reg = analysis("regular");
  REQUIRE(reg.chart);
  CHECK(reg.chart->primaries.empty());
  CHECK(reg.chart->chart_dim() == 5);
}

TEST_CASE("user-supplied primaries reproduce the automatic chart") {
  const Analysis& a = analysis("qv");
  const Analysis& u = analysis("qv_user");
  REQUIRE(u.chart);
  CHECK(u.chart->mode == ChartMode::UserSupplied);
  Rng rng(102);
  for (int k = 0; k < 10; ++k) {
    VectorXd y = rng.vec(4, 0.8);
    CHECK(std::fabs(u.chart->energy(y) - a.chart->energy(y)) <= 1e-12);
  }
  REQUIRE(u.dirac);
  CHECK(u.dirac->second_class.size() == 2);
}

TEST_CASE("Hamilton-Cartan forms of the affine example are minus d gamma") {
  const Analysis& a = analysis("affine");
  HamiltonCartanForms f = hamilton_cartan_forms(*a.chart);
  REQUIRE(f.dim == 3);
  // gamma = q2 dq1 - q1 dq2 - (q1^2 + q2^2)/2 dt
  VectorField gamma(3, [](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Vec<S> g(3);
    g << S(-0.5) * (x[1] * x[1] + x[2] * x[2]), x[2], -x[1];
    return g;
  });
  Rng rng(103);
  for (int k = 0; k < 50; ++k) {
    VectorXd x = rng.vec(3, 1.0);
    CHECK((VectorXd(f.theta(x)) - VectorXd(gamma(x))).norm() <= 1e-12);
    MatrixXd expect = -fd_exterior(gamma, x);
    CHECK((MatrixXd(f.Omega(x)) - expect).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((VectorXd(f.eta(x)) - VectorXd::Unit(3, 0)).norm() == 0.0);
  }
}

TEST_CASE("Hamilton-Cartan 2-form pulls back to the Lagrangian one") {
  for (const char* name : {"qv", "affine", "qv_time", "regular"}) {
    const Analysis& a = analysis(name);
    HamiltonCartanForms f = hamilton_cartan_forms(*a.chart);
    Rng rng(104);
    std::vector<VectorXd> pts;
    for (int k = 0; k < 20; ++k) {
      VectorXd x = rng.vec(5, 0.7);
      x[0] = 0.5 + 0.2 * rng();
      pts.push_back(x);
    }
    CHECK_MESSAGE(pullback_residual(*a.chart, f, *a.forms, pts) <= 1e-10, name);
  }
}

TEST_CASE("Hamiltonian towers and their relation to the Lagrangian ones") {
  const Analysis& af = analysis("affine");
  REQUIRE(af.hamiltonian);
  CHECK(af.hamiltonian->status == Termination::Final);
  CHECK(af.hamiltonian->final_level == 0);
  CHECK(final_constraints_j1star(*af.chart, *af.hamiltonian).size() == 2);

  const Analysis& qv = analysis("qv");
  REQUIRE(qv.hamiltonian);
  CHECK(qv.hamiltonian->status == Termination::Final);
  std::vector<std::string> desc;
  std::vector<ScalarField> cs = final_constraints_j1star(*qv.chart, *qv.hamiltonian, &desc);
  REQUIRE(cs.size() == 2);
  CHECK(desc.size() == 2);
  Rng rng(105);
  MatrixXd expect(2, 5);
  expect << 0, 0, 0, 0, 1, 0, 0, -1, 1, 0;  // dp2, dp1 - dq2
  for (int k = 0; k < 20; ++k) {
    VectorXd x = qv_final_point(rng);
    for (const auto& c : cs) CHECK(std::fabs(c(x)) <= 1e-12);
    VectorXd z = rng.vec(5, 0.7);
    CHECK(subspace_gap(stacked_gradients<double>(cs, z).transpose(), expect.transpose()) <= 1e-10);
  }

  for (const char* name : {"qv", "affine", "qv_time", "regular"}) {
    const Analysis& a = analysis(name);
    REQUIRE(a.relation);
    CHECK_MESSAGE(a.relation->related, name);
    CHECK(a.relation->counts_match);
    CHECK(a.relation->max_residual <= 1e-7);
  }
}

TEST_CASE("cosymplectic structure for the trivial and a non-trivial connection") {
  const Analysis& qv = analysis("qv");
  CosymplecticJ1Star s = build_cosymplectic(*qv.chart, BaseConnection::trivial(2));
  MatrixXd J = canonical_poisson(2);
  Rng rng(106);
  for (int k = 0; k < 20; ++k) {
    VectorXd x = rng.vec(5, 0.8);
    CHECK((VectorXd(s.R_tilde(x)) - VectorXd::Unit(5, 0)).norm() == 0.0);
    for (int a = 1; a < 5; ++a)
      for (int b = 1; b < 5; ++b)
        CHECK(std::fabs(poisson_bracket(s, coordinate_field(5, a), coordinate_field(5, b))(x) - J(a, b)) <= 1e-13);
  }

  BaseConnection y = BaseConnection::from_strings(2, {"q1", "0"});
  CosymplecticJ1Star r = build_cosymplectic(*qv.chart, y);
  for (int k = 0; k < 20; ++k) {
    VectorXd x = rng.vec(5, 0.8);
    VectorXd R = r.R_tilde(x);
    VectorXd expect = VectorXd::Unit(5, 0);
    expect[1] = x[1];
    expect[3] = -x[3];
    CHECK((R - expect).norm() <= 1e-14);
    CHECK((MatrixXd(r.omega_tilde(x)).transpose() * R).norm() <= 1e-13);
    CHECK(std::fabs(VectorXd(r.eta(x)).dot(R) - 1.0) == 0.0);
    CHECK((MatrixXd(r.omega_tilde(x)) + fd_exterior(r.theta_tilde, x)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((MatrixXd(r.Omega_h(x)) + fd_exterior(r.theta_h, x)).cwiseAbs().maxCoeff() <= 1e-8);
    // the bracket only sees omega on ker dt
    for (int a = 1; a < 5; ++a)
      for (int b = 1; b < 5; ++b)
        CHECK(std::fabs(poisson_bracket(r, coordinate_field(5, a), coordinate_field(5, b))(x) - J(a, b)) <= 1e-12);
  }
}

TEST_CASE("classification of the affine example gives the gamma matrix") {
  const Analysis& a = analysis("affine");
  REQUIRE(a.dirac);
  const DiracContext& ctx = *a.dirac;
  CHECK(ctx.second_class.size() == 2);
  CHECK(ctx.first_class.empty());
  CHECK(ctx.step3_rank == 2);
  MatrixXd J = canonical_poisson(2);
  Rng rng(107);
  for (int k = 0; k < 20; ++k) {
    VectorXd x = affine_final_point(rng);
    MatrixXd G(2, 5);
    for (int c = 0; c < 2; ++c) G.row(c) = central_gradient(ctx.second_class[static_cast<std::size_t>(c)], x).transpose();
    CHECK((MatrixXd(ctx.Cbar(x)) - G * J * G.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
  }
  // primaries as listed: gamma_12 = d_1 gamma_2 - d_2 gamma_1 = -2
  REQUIRE(a.affine);
  CHECK(a.affine->applicable);
  CHECK(a.affine->bracket_matrix_residual <= 1e-12);
}

TEST_CASE("qv classification and Dirac table") {
  const Analysis& a = analysis("qv");
  REQUIRE(a.dirac);
  const DiracContext& ctx = *a.dirac;
  CHECK(ctx.second_class.size() == 2);
  CHECK(ctx.first_class.empty());
  Rng rng(108);
  VectorXd x = qv_final_point(rng);
  MatrixXd C = ctx.Cbar(x);
  CHECK(std::fabs(std::fabs(C(0, 1)) - 1.0) <= 1e-12);
  CHECK(std::fabs(C(0, 1) + C(1, 0)) <= 1e-12);
  // table from the hand analysis: only {q1, q2} and {q1, p1} are nonzero, both 1
  std::map<std::pair<int, int>, double> table = {{{1, 2}, 1.0}, {{1, 3}, 1.0}, {{1, 4}, 0.0},
                                                 {{2, 3}, 0.0}, {{2, 4}, 0.0}, {{3, 4}, 0.0}};
  for (int k = 0; k < 10; ++k) {
    VectorXd y = qv_final_point(rng);
    for (const auto& [ij, v] : table) {
      double b = dirac_bracket(ctx, coordinate_field(5, ij.first), coordinate_field(5, ij.second))(y);
      CHECK(std::fabs(b - v) <= 1e-12);
    }
  }
}

TEST_CASE("Dirac bracket agrees with the explicit bivector") {
  for (const char* name : {"qv", "affine"}) {
    const Analysis& a = analysis(name);
    const DiracContext& ctx = *a.dirac;
    Rng rng(109);
    for (int k = 0; k < 10; ++k) {
      VectorXd x = rng.vec(5, 0.6);
      MatrixXd D = dirac_bivector(ctx.second_class, x, 2);
      ScalarField F = linear_plus_square(5, rng.vec(5), rng.vec(5, 0.5));
      ScalarField G = linear_plus_square(5, rng.vec(5), rng.vec(5, 0.5));
      double expect = central_gradient(F, x).dot(D * central_gradient(G, x));
      CHECK_MESSAGE(std::fabs(dirac_bracket(ctx, F, G)(x) - expect) <= 1e-6, name);
    }
  }
}

TEST_CASE("Dirac bracket algebra") {
  for (const char* name : {"qv", "affine"}) {
    const Analysis& a = analysis(name);
    const DiracContext& ctx = *a.dirac;
    Rng rng(110);
    double anti = 0.0, leib = 0.0, jac = 0.0, cas = 0.0;
    for (int k = 0; k < 20; ++k) {
      VectorXd x = rng.vec(5, 0.6);
      ScalarField F = linear_plus_square(5, rng.vec(5), rng.vec(5, 0.5));
      ScalarField G = linear_plus_square(5, rng.vec(5), rng.vec(5, 0.5));
      ScalarField H = linear_plus_square(5, rng.vec(5), rng.vec(5, 0.5));
      anti = std::max(anti, std::fabs(dirac_bracket(ctx, F, G)(x) + dirac_bracket(ctx, G, F)(x)));
      double lhs = dirac_bracket(ctx, F, product(G, H))(x);
      double rhs = dirac_bracket(ctx, F, G)(x) * H(x) + G(x) * dirac_bracket(ctx, F, H)(x);
      leib = std::max(leib, std::fabs(lhs - rhs));
      double j = dirac_bracket(ctx, F, dirac_bracket(ctx, G, H))(x) + dirac_bracket(ctx, G, dirac_bracket(ctx, H, F))(x) +
                 dirac_bracket(ctx, H, dirac_bracket(ctx, F, G))(x);
      jac = std::max(jac, std::fabs(j));
      for (const auto& chi : ctx.second_class) cas = std::max(cas, std::fabs(dirac_bracket(ctx, chi, F)(x)));
    }
    CHECK_MESSAGE(anti <= 1e-12, name);
    CHECK_MESSAGE(leib <= 1e-12, name);
    CHECK_MESSAGE(jac <= 1e-6, name);
    CHECK_MESSAGE(cas <= 1e-12, name);
  }
}

TEST_CASE("projectors are complementary and kill the constraint directions") {
  for (const char* name : {"qv", "affine", "qv_time"}) {
    const Analysis& a = analysis(name);
    const DiracContext& ctx = *a.dirac;
    Rng rng(111);
    for (int k = 0; k < 10; ++k) {
      VectorXd x = rng.vec(5, 0.6);
      x[0] = 0.5 + 0.1 * rng();
      MatrixXd P = projector_P(ctx, x), Q = projector_Q(ctx, x);
      const MatrixXd I = MatrixXd::Identity(5, 5);
      CHECK((P * P - P).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((Q * Q - Q).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((P + Q - I).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((P * Q).cwiseAbs().maxCoeff() <= 1e-9);
      MatrixXd G = stacked_gradients<double>(ctx.second_class, x);
      CHECK((G * P).cwiseAbs().maxCoeff() <= 1e-9);
      for (const auto& chi : ctx.second_class) {
        VectorXd X = hamiltonian_field(ctx.structure, chi)(x);
        CHECK((P * X).norm() <= 1e-9 * std::max(1.0, X.norm()));
      }
    }
  }
  // no second-class constraints: P is the identity
  const Analysis& reg = analysis("regular");
  VectorXd x = VectorXd::Constant(5, 0.2);
  CHECK((projector_P(*reg.dirac, x) - MatrixXd::Identity(5, 5)).norm() == 0.0);
}

TEST_CASE("brackets and projected evolution do not depend on the connection") {
  for (const char* name : {"qv", "affine"}) {
    const Analysis& a = analysis(name);
    BaseConnection y = BaseConnection::from_strings(2, {"q1", "0"});
    CosymplecticJ1Star s = build_cosymplectic(*a.chart, y);
    DiracContext other = classify_constraints(s, *a.chart, *a.hamiltonian);
    Rng rng(112);
    for (int k = 0; k < 10; ++k) {
      VectorXd x = std::string(name) == "qv" ? qv_final_point(rng) : affine_final_point(rng);
      for (int i = 1; i < 5; ++i)
        for (int j = i + 1; j < 5; ++j) {
          ScalarField F = coordinate_field(5, i), G = coordinate_field(5, j);
          CHECK(std::fabs(dirac_bracket(*a.dirac, F, G)(x) - dirac_bracket(other, F, G)(x)) <= 1e-12);
        }
      CHECK((projected_evolution(*a.dirac, x) - projected_evolution(other, x)).norm() <= 1e-10);
    }
  }
}

TEST_CASE("projected evolution does not depend on the extension of the Hamiltonian") {
  for (const char* name : {"qv", "affine"}) {
    const Analysis& a = analysis(name);
    DiracContext ext = *a.dirac;
    ScalarField h = ext.structure.h;
    ScalarField c0 = ext.second_class[0], c1 = ext.second_class[1];
    ext.structure = with_hamiltonian(ext.structure, ScalarField(5, [h, c0, c1](const auto& x) {
                                       using S = typename std::decay_t<decltype(x)>::Scalar;
                                       return S(h(x) + (S(3.0) + x[1]) * c0(x) - S(0.7) * c1(x) * c1(x));
                                     }));
    Rng rng(113);
    for (int k = 0; k < 10; ++k) {
      VectorXd x = std::string(name) == "qv" ? qv_final_point(rng) : affine_final_point(rng);
      CHECK_MESSAGE((projected_evolution(*a.dirac, x) - projected_evolution(ext, x)).norm() <= 1e-10, name);
    }
  }
}

TEST_CASE("evolution of coordinates") {
  const Analysis& qv = analysis("qv");
  Rng rng(114);
  for (int k = 0; k < 10; ++k) {
    VectorXd x = qv_final_point(rng);
    for (int i = 0; i < 5; ++i) {
      double e = evolution(*qv.dirac, coordinate_field(5, i))(x);
      CHECK(std::fabs(e - (i == 0 ? 1.0 : 0.0)) <= 1e-12);
    }
  }
  // affine example: X dt-component 1 solving i(X)(-d gamma) = 0, computed directly
  const Analysis& af = analysis("affine");
  for (int k = 0; k < 10; ++k) {
    VectorXd x = affine_final_point(rng);
    const double q1 = x[1], q2 = x[2];
    MatrixXd W = MatrixXd::Zero(3, 3);  // -d gamma = 2 dq1^dq2 + q1 dq1^dt + q2 dq2^dt
    W += 2.0 * (VectorXd::Unit(3, 1) * VectorXd::Unit(3, 2).transpose() - VectorXd::Unit(3, 2) * VectorXd::Unit(3, 1).transpose());
    W += q1 * (VectorXd::Unit(3, 1) * VectorXd::Unit(3, 0).transpose() - VectorXd::Unit(3, 0) * VectorXd::Unit(3, 1).transpose());
    W += q2 * (VectorXd::Unit(3, 2) * VectorXd::Unit(3, 0).transpose() - VectorXd::Unit(3, 0) * VectorXd::Unit(3, 2).transpose());
    MatrixXd A(4, 3);
    A.topRows(3) = W.transpose();
    A.row(3) = VectorXd::Unit(3, 0).transpose();
    VectorXd rhs = VectorXd::Unit(4, 3);
    VectorXd R = A.colPivHouseholderQr().solve(rhs);
    CHECK((A * R - rhs).norm() <= 1e-12);
    for (int j = 0; j < 2; ++j) CHECK(std::fabs(evolution(*af.dirac, coordinate_field(5, 1 + j))(x) - R[1 + j]) <= 1e-12);
    CHECK(std::fabs(R[1] - q2 / 2) <= 1e-12);
    CHECK(std::fabs(R[2] + q1 / 2) <= 1e-12);
  }
}

TEST_CASE("chart dynamics pushed into J1*E is the projected evolution") {
  for (const char* name : {"qv", "affine", "qv_time", "regular"}) {
    const Analysis& a = analysis(name);
    REQUIRE(a.hamiltonian->dynamics);
    for (const auto& y : a.hamiltonian->final().samples) {
      VectorXd x = a.chart->embed(y);
      VectorXd pushed = pushed_dynamics(*a.chart, *a.hamiltonian->dynamics, y);
      CHECK_MESSAGE((pushed - projected_evolution(*a.dirac, x)).norm() <= 1e-7, name);
    }
  }
}

TEST_CASE("stated inverse of the time-extended bracket matrix") {
  for (const char* name : {"qv", "qv_time"}) {
    ClosedBracketCheck c = time_extended_bracket_check(*analysis(name).dirac);
    CHECK_MESSAGE(c.inverse_residual <= 1e-10, name);
  }
  CHECK(time_extended_bracket_check(*analysis("qv_time").dirac).time_dependent);
  CHECK(time_extended_bracket_check(*analysis("regular").dirac).detail == "no second-class constraints");
}
