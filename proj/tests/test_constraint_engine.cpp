#include <doctest.h>

#include <cmath>

#include "jetflow/constraint_engine.hpp"
#include "jetflow/jet_geometry.hpp"
#include "test_support.hpp"

using namespace jetflow;
using namespace testing_support;

namespace {

struct LagProblem {
  LagrangianSystem sys;
  LagrangianForms forms;
  GeometricProblem trivial;  // Y = d/dt
  GeometricProblem sode;     // Y = d/dt + v d/dq
};

LagProblem lag_problem(int n, const std::string& L, VectorXd seed = {}) {
  if (seed.size() == 0) seed = VectorXd::Constant(2 * n + 1, 0.3);
  LagProblem lp;
  lp.sys = make_system(n, L, seed);
  lp.forms = build_forms(lp.sys);
  const int d = 2 * n + 1;
  lp.trivial = make_problem(d, lp.forms.Omega, lp.forms.eta, constant_vector_field(VectorXd::Unit(d, 0)), seed);
  lp.sode = make_problem(d, lp.forms.Omega, lp.forms.eta, default_sode_connection(n), seed);
  return lp;
}

// (t, x, y) toy: Omega = g(x) dt ^ dx, eta = dt. Its only candidate constraint is -g.
template <class G> GeometricProblem dt_dx_problem(G g, const VectorXd& seed) {
  MatrixField Om(3, [g](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> W = Mat<S>::Zero(3, 3);
    S c = g(x[1]);
    W(0, 1) = c;
    W(1, 0) = -c;
    return W;
  });
  return make_problem(3, Om, constant_vector_field(VectorXd::Unit(3, 0)), constant_vector_field(VectorXd::Unit(3, 0)),
                      seed, {"t", "x", "y"});
}

RunOptions quiet() {
  RunOptions o;
  o.rng_seed = 4711;
  return o;
}

}  // namespace

TEST_CASE("split forms of the free particle") {
  LagProblem lp = lag_problem(1, "0.5*v1^2");
  VectorXd x(3);
  x << 0.0, 1.0, 2.0;
  VectorXd g = lp.trivial.gamma(x);
  // i(d/dt)(dq ^ dv + v dv ^ dt) = -v dv
  VectorXd expect(3);
  expect << 0.0, 0.0, -2.0;
  CHECK((g - expect).norm() <= 1e-14);
  MatrixXd w = lp.trivial.omega(x);
  MatrixXd dqdv = wedge<double>(VectorXd::Unit(3, 1), VectorXd::Unit(3, 2));
  CHECK((w - dqdv).norm() <= 1e-14);
  // normalization of the split
  VectorXd Y = lp.trivial.Y(x);
  CHECK((w.transpose() * Y).norm() <= 1e-14);
  CHECK(std::fabs(g.dot(Y)) <= 1e-14);
}

TEST_CASE("forms without dt components are untouched by the split") {
  MatrixXd W0 = wedge<double>(VectorXd::Unit(5, 1), VectorXd::Unit(5, 3)) + 2.0 * wedge<double>(VectorXd::Unit(5, 2), VectorXd::Unit(5, 4));
  MatrixField Om = constant_matrix_field(W0);
  SplitForms s = split_forms(Om, constant_vector_field(VectorXd::Unit(5, 0)), constant_vector_field(VectorXd::Unit(5, 0)));
  VectorXd x = VectorXd::Constant(5, 0.2);
  CHECK(VectorXd(s.gamma(x)).norm() == 0.0);
  CHECK((MatrixXd(s.omega(x)) - W0).norm() == 0.0);
}

TEST_CASE("pointwise solve") {
  LagProblem reg = lag_problem(2, "0.5*(v1^2 + v2^2) - q1*q2");
  VectorXd x = VectorXd::Constant(5, 0.4);
  PointSolution s = solve_pointwise(reg.trivial, x);
  CHECK(s.solvable);
  CHECK(s.nullspace.cols() == 0);
  VectorXd R = reeb(make_preco<double>(reg.forms.eta(x), reg.forms.Omega(x)));
  CHECK((s.X - R).norm() <= 1e-10);

  LagProblem qv = lag_problem(2, "0.5*v1^2 + q2*v1");
  VectorXd off(5), on(5);
  off << 0.0, 0.3, -0.2, 0.7, 0.4;
  on = off;
  on[3] = 0.0;
  CHECK(!solve_pointwise(qv.trivial, off).solvable);
  CHECK(solve_pointwise(qv.trivial, on).solvable);
  // least-squares oracle: solvability of [Omega^T; eta^T] X = [0; 1]
  for (const VectorXd& y : {off, on}) {
    MatrixXd A(6, 5);
    A << MatrixXd(qv.forms.Omega(y)).transpose(), VectorXd(qv.forms.eta(y)).transpose();
    VectorXd b = VectorXd::Zero(6);
    b[5] = 1.0;
    VectorXd sol = A.jacobiSvd(Eigen::ComputeFullU | Eigen::ComputeFullV).solve(b);
    bool ls_ok = (A * sol - b).norm() <= 1e-9;
    CHECK(ls_ok == solve_pointwise(qv.trivial, y).solvable);
  }

  GeometricProblem zero = make_problem(5, constant_matrix_field(MatrixXd::Zero(5, 5)), constant_vector_field(VectorXd::Unit(5, 0)),
                                       constant_vector_field(VectorXd::Unit(5, 0)), VectorXd::Zero(5));
  PointSolution z = solve_pointwise(zero, VectorXd::Zero(5));
  CHECK(z.solvable);
  CHECK(z.nullspace.cols() == 4);
}

TEST_CASE("regular systems stop at level zero") {
  LagProblem reg = lag_problem(2, "0.5*(v1^2 + v2^2)");
  ConstraintLevel l1 = first_generation(reg.trivial, quiet());
  CHECK(l1.new_constraints.empty());
  AlgorithmReport rep = run(reg.trivial, quiet());
  CHECK(rep.status == Termination::Final);
  CHECK(rep.final_level == 0);
  CHECK(rep.final_constraints().empty());
  REQUIRE(rep.dynamics);
  CHECK(rep.dynamics->gauge_dim == 0);
  CHECK(is_sode(2, rep.dynamics->X_part, rep.final().samples, 1e-9));
}

TEST_CASE("first generation of the singular q-v system is v1 = 0") {
  LagProblem qv = lag_problem(2, "0.5*v1^2 + q2*v1");
  ConstraintLevel l1 = first_generation(qv.trivial, quiet());
  REQUIRE(l1.new_constraints.size() == 1);
  ScalarField chi = l1.new_constraints[0].f;
  Rng rng(1);
  // hand analysis: i(X) Omega = 0 forces X^q1 = 0 and X^q1 = v1, so the zero set is v1 = 0
  double ratio = 0.0;
  for (int k = 0; k < 20; ++k) {
    VectorXd x = rng.vec(5);
    VectorXd on = x;
    on[3] = 0.0;
    CHECK(std::fabs(chi(on)) <= 1e-12);
    double r = chi(x) / x[3];
    if (k == 0) ratio = r;
    CHECK(std::fabs(r - ratio) <= 1e-9 * std::fabs(ratio));
  }
  CHECK(ratio != 0.0);
}

TEST_CASE("tower of the singular q-v system against hand analysis") {
  LagProblem qv = lag_problem(2, "0.5*v1^2 + q2*v1");
  AlgorithmReport rep = run(qv.trivial, quiet());
  REQUIRE(rep.status == Termination::Final);
  // X = d/dt + a dq + b dv with a1 = 0, a1 = v1, b1 = -a2, tangency b1 = 0: only v1 = 0, gauge d/dv2
  CHECK(rep.final_constraints().size() == 1);
  REQUIRE(rep.dynamics);
  CHECK(rep.dynamics->gauge_dim == 1);
  for (const auto& x : rep.final().samples) {
    CHECK(std::fabs(x[3]) <= 1e-8);
    VectorXd X = rep.dynamics->X_part(x);
    CHECK(std::fabs(X[0] - 1.0) <= 1e-10);
    CHECK(std::fabs(X[1]) <= 1e-10);
    CHECK(std::fabs(X[2]) <= 1e-10);
    CHECK(std::fabs(X[3]) <= 1e-10);
    MatrixXd G = rep.dynamics->gauge_basis(x);
    CHECK(subspace_gap(G, VectorXd::Unit(5, 4)) <= 1e-10);
  }
  for (const auto& c : rep.checks) CHECK_MESSAGE(c.passed, c.name, " ", c.value);
}

TEST_CASE("affine Lagrangian has no dynamical constraints and pure velocity gauge") {
  VectorXd seed(5);
  seed << 0.0, 0.3, -0.2, 0.1, 0.4;
  LagProblem ex = lag_problem(2, "q2*v1 - q1*v2 - 0.5*(q1^2 + q2^2)", seed);
  AlgorithmReport rep = run(ex.trivial, quiet());
  REQUIRE(rep.status == Termination::Final);
  REQUIRE(rep.dynamics);
  CHECK(rep.final_constraints().empty());
  // velocities are pure gauge on the base; the t, q part is the direct solve of i(R) d gamma = 0, i(R) dt = 1
  CHECK(rep.dynamics->gauge_dim == 2);
  for (const auto& x : rep.final().samples) {
    VectorXd X = rep.dynamics->X_part(x);
    CHECK(std::fabs(X[1] - 0.5 * x[2]) <= 1e-10);
    CHECK(std::fabs(X[2] + 0.5 * x[1]) <= 1e-10);
  }
}

TEST_CASE("tangency, kernel equality and d gamma vanishing at termination") {
  for (const char* L : {"0.5*v1^2 + q2*v1", "0.5*(v1 + v2)^2 - cos(q1)", "q2*v1 - q1*v2 - 0.5*(q1^2 + q2^2)",
                        "0.5*v1^2 + t*q2*v1"}) {
    VectorXd seed(5);
    seed << 0.5, 0.3, -0.2, 0.1, 0.4;  // t away from the t v1 = 0 crossing of the time-dependent case
    LagProblem lp = lag_problem(2, L, seed);
    for (const GeometricProblem* p : {&lp.trivial, &lp.sode}) {
      AlgorithmReport rep = run(*p, quiet());
      REQUIRE(rep.status == Termination::Final);
      const auto& fin = rep.final();
      for (const auto& c : fin.constraints)
        for (const auto& x : fin.samples) CHECK(std::fabs(lie<double>(c.f, rep.dynamics->X_part, x)) <= 1e-7);
      if (rep.levels.size() < 2) continue;
      for (const auto& x : rep.levels[1].samples) {
        MatrixXd OmT(6, 5), omT(6, 5);
        OmT << MatrixXd(p->Omega(x)).transpose(), VectorXd(p->eta(x)).transpose();
        omT << MatrixXd(p->omega(x)).transpose(), VectorXd(p->eta(x)).transpose();
        MatrixXd K1 = svd_null(OmT), K2 = svd_null(omT);
        CHECK(K1.cols() == K2.cols());
        CHECK(subspace_gap(K1, K2) <= 1e-8);
        // d gamma by central differences on pairs from ker omega ∩ ker eta
        const double h = 1e-5;
        MatrixXd Dg(5, 5);
        for (int i = 0; i < 5; ++i) {
          VectorXd e = VectorXd::Unit(5, i) * h;
          Dg.row(i) = (VectorXd(p->gamma(VectorXd(x + e))) - VectorXd(p->gamma(VectorXd(x - e)))).transpose() / (2 * h);
        }
        MatrixXd dg = Dg - Dg.transpose();
        if (K2.cols()) CHECK((K2.transpose() * dg * K2).cwiseAbs().maxCoeff() <= 1e-6);
      }
    }
  }
}

TEST_CASE("constraint towers do not depend on the connection") {
  for (const char* L : {"0.5*v1^2 + q2*v1", "0.5*(v1 + v2)^2 - cos(q1)", "q2*v1 - q1*v2 - 0.5*(q1^2 + q2^2)",
                        "0.5*(v1^2 + v2^2)"}) {
    LagProblem lp = lag_problem(2, L);
    AlgorithmReport a = run(lp.trivial, quiet());
    AlgorithmReport b = run(lp.sode, quiet());
    REQUIRE(a.status == Termination::Final);
    REQUIRE(b.status == Termination::Final);
    CHECK(cross_vanishing(a, b) <= 1e-6);
    CHECK(a.final_constraints().size() == b.final_constraints().size());
    CHECK(a.dynamics->gauge_dim == b.dynamics->gauge_dim);
    // same solutions modulo gauge at the shared samples
    for (const auto& x : a.final().samples) {
      VectorXd d = VectorXd(a.dynamics->X_part(x)) - VectorXd(b.dynamics->X_part(x));
      MatrixXd G = a.dynamics->gauge_basis(x);
      if (G.cols()) {
        MatrixXd Q = svd_span(G);
        d -= Q * (Q.transpose() * d);
      }
      CHECK(d.norm() <= 1e-8);
    }
  }
}

TEST_CASE("toy problems: empty, all gauge, one constraint") {
  RunOptions opt = quiet();
  VectorXd seed(3);
  seed << 0.0, 0.5, 0.0;
  AlgorithmReport empty = run(dt_dx_problem([](auto x) { return decltype(x)(1.0) + x * x; }, seed), opt);
  CHECK(empty.status == Termination::Empty);

  AlgorithmReport free = run(dt_dx_problem([](auto x) { return decltype(x)(0.0) * x; }, seed), opt);
  REQUIRE(free.status == Termination::Final);
  CHECK(free.final_constraints().empty());
  CHECK(free.dynamics->gauge_dim == 2);

  AlgorithmReport one = run(dt_dx_problem([](auto x) { return x; }, seed), opt);
  REQUIRE(one.status == Termination::Final);
  REQUIRE(one.final_constraints().size() == 1);
  for (const auto& x : one.final().samples) {
    CHECK(std::fabs(x[1]) <= 1e-10);
    CHECK(std::fabs(VectorXd(one.dynamics->X_part(x))[1]) <= 1e-10);
  }
  CHECK(one.dynamics->gauge_dim == 1);
}

TEST_CASE("connection must be normalized") {
  LagProblem lp = lag_problem(1, "0.5*v1^2");
  VectorXd Yb = VectorXd::Unit(3, 0) * 2.0;
  GeometricProblem bad = make_problem(3, lp.forms.Omega, lp.forms.eta, constant_vector_field(Yb), VectorXd::Zero(3));
  try {
    run(bad, quiet());
    FAIL("expected ConnectionNotNormalized");
  } catch (const AssumptionFailure& a) {
    CHECK(a.kind == "ConnectionNotNormalized");
  }
}

TEST_CASE("projection and identically-zero detection") {
  std::vector<ScalarField> cs = {ScalarField(3, [](const auto& x) { return x[1] * x[1] + x[2] * x[2] - 1.0; })};
  VectorXd x0(3);
  x0 << 0.0, 2.0, 0.5;
  ProjectionResult pr = project_point(cs, x0, Tolerances{});
  CHECK(pr.converged);
  CHECK(std::fabs(pr.x[1] * pr.x[1] + pr.x[2] * pr.x[2] - 1.0) <= 1e-10);
  RunOptions opt = quiet();
  ScalarField zero(3, [](const auto& x) { return x[1] * x[2] - x[2] * x[1]; });
  CHECK(identically_zero(zero, x0, 1, opt));
  CHECK(!identically_zero(cs[0], x0, 1, opt));
  CHECK(classify_termination(true, 0, 5, true) == Termination::Empty);
  CHECK(classify_termination(false, 5, 5, true) == Termination::ZeroDimensional);
  CHECK(classify_termination(false, 1, 5, false) == Termination::Final);
}

TEST_CASE("tighter rank tolerance keeps the integer ranks") {
  for (const char* L : {"0.5*v1^2 + q2*v1", "q2*v1 - q1*v2 - 0.5*(q1^2 + q2^2)"}) {
    LagProblem lp = lag_problem(2, L);
    RunOptions a = quiet(), b = quiet();
    b.tol.rank = a.tol.rank / 10.0;
    AlgorithmReport ra = run(lp.trivial, a), rb = run(lp.trivial, b);
    REQUIRE(ra.levels.size() == rb.levels.size());
    for (std::size_t i = 0; i < ra.levels.size(); ++i) {
      CHECK(ra.levels[i].rank == rb.levels[i].rank);
      CHECK(ra.levels[i].perp_rank == rb.levels[i].perp_rank);
    }
    CHECK(ra.dynamics->gauge_dim == rb.dynamics->gauge_dim);
  }
}
