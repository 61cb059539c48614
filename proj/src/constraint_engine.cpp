#include "jetflow/constraint_engine.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include <Eigen/SVD>

#include "jetflow/parallel.hpp"

namespace jetflow {

SplitForms split_forms(const MatrixField& Omega, const VectorField& eta, const VectorField& Y) {
  SplitForms s;
  s.gamma = VectorField(Omega.arity(), [Omega, Y](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> W = Omega(x);
    Vec<S> y = Y(x);
    return Vec<S>(W.transpose() * y);
  });
  VectorField gamma = s.gamma;
  s.omega = MatrixField(Omega.arity(), [Omega, eta, gamma](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> W = Omega(x);
    Vec<S> e = eta(x), g = gamma(x);
    return Mat<S>(W - wedge<S>(e, g));
  });
  return s;
}

GeometricProblem make_problem(int dim, MatrixField Omega, VectorField eta, VectorField Y, VectorXd seed,
                              std::vector<std::string> coords) {
  GeometricProblem p;
  p.dim = dim;
  p.Omega = std::move(Omega);
  p.eta = std::move(eta);
  p.Y = std::move(Y);
  SplitForms s = split_forms(p.Omega, p.eta, p.Y);
  p.gamma = s.gamma;
  p.omega = s.omega;
  p.seed = std::move(seed);
  if (coords.empty())
    for (int i = 0; i < dim; ++i) coords.push_back("x" + std::to_string(i));
  p.coords = std::move(coords);
  if (p.seed.size() != dim) throw InputError("seed dimension does not match the problem");
  return p;
}

void check_connection(const GeometricProblem& p, const std::vector<VectorXd>& pts, double tol) {
  for (const auto& x : pts) {
    VectorXd y = p.Y(x), e = p.eta(x);
    MatrixXd w = p.omega(x);
    if (std::fabs(e.dot(y) - 1.0) > tol)
      throw AssumptionFailure("ConnectionNotNormalized", "eta(Y) differs from 1");
    double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
    if ((w.transpose() * y).cwiseAbs().maxCoeff() > tol * scale || std::fabs(VectorXd(p.gamma(x)).dot(y)) > tol * scale)
      throw AssumptionFailure("ConnectionNotNormalized", "i(Y) omega or i(Y) gamma is nonzero");
  }
}

PointSolution solve_pointwise(const GeometricProblem& p, const VectorXd& x, const Tolerances& tol) {
  PointSolution s;
  PrecoPoint<double> pp = preco_at<double>(p, x);
  MatrixXd B = flat_matrix(pp);
  VectorXd b = rhs_at<double>(p, x);
  Eigen::JacobiSVD<MatrixXd> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
  svd.setThreshold(std::max(tol.rank, 1e-15));
  s.X = svd.solve(b);
  s.residual = (B * s.X - b).norm();
  s.solvable = s.residual <= tol.residual * std::max(1.0, b.norm());
  MatrixXd W = p.Omega(x);
  VectorXd e = p.eta(x);
  MatrixXd K(p.dim + 1, p.dim);
  K << W.transpose(), e.transpose();
  s.nullspace = null_space(K, tol);
  return s;
}

std::vector<ScalarField> fields_of(const std::vector<Constraint>& cs) {
  std::vector<ScalarField> out;
  out.reserve(cs.size());
  for (const auto& c : cs) out.push_back(c.f);
  return out;
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::Empty:
      return "Empty";
    case Termination::ZeroDimensional:
      return "ZeroDimensional";
    case Termination::Final:
      return "Final";
    case Termination::MaxIterExceeded:
      return "MaxIterExceeded";
  }
  return "?";
}

std::string describe_vector(const VectorXd& v) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double c = std::fabs(v[i]) < 5e-13 ? 0.0 : v[i];
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", c);
    os << (i ? ", " : "") << buf;
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------- sampling

static double residual_norm(const std::vector<ScalarField>& cs, const VectorXd& x) {
  double r = 0.0;
  for (const auto& c : cs) r = std::max(r, std::fabs(c(x)));
  return r;
}

ProjectionResult project_point(const std::vector<ScalarField>& cs, const VectorXd& x0, const Tolerances& tol,
                               int max_iter) {
  ProjectionResult out;
  out.x = x0;
  if (cs.empty()) {
    out.converged = true;
    return out;
  }
  try {
    out.residual = residual_norm(cs, out.x);
  } catch (const std::exception&) {
    return out;
  }
  for (int it = 0; it < max_iter && out.residual > tol.projection; ++it) {
    out.iterations = it + 1;
    VectorXd chi(static_cast<Eigen::Index>(cs.size()));
    MatrixXd J;
    try {
      for (std::size_t i = 0; i < cs.size(); ++i) chi[static_cast<Eigen::Index>(i)] = cs[i](out.x);
      J = stacked_gradients<double>(cs, out.x);
    } catch (const std::exception&) {
      return out;
    }
    Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-12);
    VectorXd step = -svd.solve(chi);
    double alpha = 1.0;
    bool improved = false;
    for (int h = 0; h < 30; ++h) {
      VectorXd trial = out.x + alpha * step;
      try {
        double r = residual_norm(cs, trial);
        if (r < out.residual) {
          out.x = trial;
          out.residual = r;
          improved = true;
          break;
        }
      } catch (const std::exception&) {
      }
      alpha *= 0.5;
    }
    if (!improved) break;
  }
  out.converged = out.residual <= tol.projection;
  return out;
}

SampleSet sample_level(const std::vector<ScalarField>& cs, const VectorXd& seed, std::uint64_t rng_seed,
                       const RunOptions& opt) {
  SampleSet s;
  ProjectionResult ps = project_point(cs, seed, opt.tol);
  if (!ps.converged) return s;
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, opt.sample_sigma);
  std::vector<VectorXd> starts(static_cast<std::size_t>(opt.samples));
  for (auto& st : starts) {
    st = ps.x;
    for (Eigen::Index i = 0; i < st.size(); ++i) st[i] += gauss(rng);
  }
  std::vector<ProjectionResult> results(starts.size());
  parallel_for(static_cast<int>(starts.size()), [&](int i) {
    results[static_cast<std::size_t>(i)] = project_point(cs, starts[static_cast<std::size_t>(i)], opt.tol);
  });
  s.points.push_back(ps.x);
  for (const auto& r : results) {
    if (r.converged) s.points.push_back(r.x);
    else ++s.failures;
  }
  s.ok = true;
  return s;
}

bool identically_zero(const ScalarField& f, const VectorXd& center, std::uint64_t rng_seed, const RunOptions& opt) {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, opt.zero_test_sigma);
  int evaluated = 0;
  for (int k = 0; k < opt.zero_test_points; ++k) {
    VectorXd x = center;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += gauss(rng);
    double v;
    try {
      v = f(x);
    } catch (const std::exception&) {
      continue;
    }
    ++evaluated;
    if (!(std::fabs(v) <= opt.tol.zero_drop)) return false;
  }
  return evaluated > 0;
}

double max_abs_on(const ScalarField& f, const std::vector<VectorXd>& pts) {
  double m = 0.0;
  for (const auto& x : pts) m = std::max(m, std::fabs(f(x)));
  return m;
}

void require_full_rank(const std::vector<ScalarField>& cs, const std::vector<VectorXd>& pts, const Tolerances& tol,
                       const std::string& where) {
  if (cs.empty()) return;
  for (const auto& x : pts) {
    MatrixXd J = stacked_gradients<double>(cs, x);
    int r = numeric_rank(J, tol);
    if (r != static_cast<int>(cs.size()))
      throw AssumptionFailure("RankDrift", where + ": constraint Jacobian rank " + std::to_string(r) + " < " +
                                               std::to_string(cs.size()) + " at a sample");
  }
}

static bool independent_of(const MatrixXd& J, const VectorXd& g, const Tolerances& tol) {
  MatrixXd M(J.rows() + 1, g.size());
  if (J.rows() > 0) M.topRows(J.rows()) = J;
  M.row(J.rows()) = g.transpose();
  int before = J.rows() > 0 ? numeric_rank(J, tol) : 0;
  return numeric_rank(M, tol) > before;
}

Extension extend_stack(const std::vector<Constraint>& stack, const std::vector<Constraint>& candidates,
                       const std::vector<VectorXd>& level_samples, std::uint64_t rng_seed, const RunOptions& opt) {
  Extension ext;
  const VectorXd& seed = level_samples.front();
  std::vector<Constraint> live;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Constraint& c = candidates[k];
    if (identically_zero(c.f, seed, rng_seed + 101 * (k + 1), opt)) {
      ++ext.dropped_zero;
      ext.notes.push_back("dropped identically zero candidate: " + c.description);
      continue;
    }
    double scale = 1.0;
    try {
      scale = std::max(1.0, gradient<double>(c.f, seed).norm());
    } catch (const std::exception&) {
    }
    if (max_abs_on(c.f, level_samples) <= opt.tol.residual * scale) {
      ++ext.dropped_on_level;
      continue;
    }
    live.push_back(c);
  }
  if (live.empty()) {
    ext.samples.ok = true;
    ext.samples.points = level_samples;
    return ext;
  }

  std::vector<ScalarField> all = fields_of(stack);
  for (const auto& c : live) all.push_back(c.f);
  ProjectionResult pr = project_point(all, seed, opt.tol);
  if (!pr.converged) {
    std::mt19937_64 rng(rng_seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, opt.sample_sigma * 5.0);
    for (int k = 0; k < 20 && !pr.converged; ++k) {
      VectorXd x = seed;
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += gauss(rng);
      pr = project_point(all, x, opt.tol);
    }
  }
  if (!pr.converged) {
    ext.empty = true;
    ext.notes.push_back("Gauss-Newton projection failed from the seed and 20 restarts; zero set taken as empty");
    return ext;
  }

  std::vector<Constraint> cur = stack;
  std::vector<Constraint> pending = live;
  VectorXd anchor = pr.x;
  for (int round = 0; round < 4; ++round) {
    MatrixXd J = cur.empty() ? MatrixXd(0, anchor.size()) : stacked_gradients<double>(fields_of(cur), anchor);
    // larger gradients first: products such as f*g lose to their regular factors
    std::vector<double> norms;
    for (const auto& c : pending) norms.push_back(gradient<double>(c.f, anchor).norm());
    std::vector<std::size_t> order(pending.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b] * (1.0 + 1e-9); });
    std::vector<Constraint> sorted;
    for (std::size_t i : order) sorted.push_back(pending[i]);
    pending = sorted;
    std::vector<Constraint> rest;
    for (const auto& c : pending) {
      VectorXd g = gradient<double>(c.f, anchor);
      if (independent_of(J, g, opt.tol)) {
        cur.push_back(c);
        ext.added.push_back(c);
        MatrixXd J2(J.rows() + 1, J.cols());
        if (J.rows()) J2.topRows(J.rows()) = J;
        J2.row(J.rows()) = g.transpose();
        J = J2;
      } else {
        rest.push_back(c);
      }
    }
    ext.samples = sample_level(fields_of(cur), anchor, rng_seed + 7919, opt);
    if (!ext.samples.ok) {
      ext.empty = true;
      ext.notes.push_back("projection of the selected constraints failed");
      return ext;
    }
    std::vector<Constraint> leftover;
    for (const auto& c : rest)
      if (max_abs_on(c.f, ext.samples.points) > 1e-6) leftover.push_back(c);
    if (leftover.empty()) break;
    ext.notes.push_back("a dependent-at-seed candidate does not vanish on the new samples; re-selecting");
    pending = leftover;
    anchor = ext.samples.points.front();
    ProjectionResult again = project_point([&] {
      std::vector<ScalarField> f = fields_of(cur);
      for (const auto& c : leftover) f.push_back(c.f);
      return f;
    }(), anchor, opt.tol);
    if (again.converged) anchor = again.x;
  }
  require_full_rank(fields_of(cur), ext.samples.points, opt.tol, "constraint stack");
  return ext;
}

// ---------------------------------------------------------------- levels

static MatrixField make_perp_field(const GeometricProblem& p, const std::vector<ScalarField>& cs, const PivotSet& piv) {
  const int d = p.dim;
  return MatrixField(d, [p, cs, piv, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    PrecoPoint<S> pp = preco_at<S>(p, x);
    const Eigen::Index k = static_cast<Eigen::Index>(cs.size());
    Mat<S> A(d, d + k);
    A.leftCols(d) = flat_matrix(pp).transpose();
    if (k > 0) A.rightCols(k) = -stacked_gradients<S>(cs, x).transpose();
    return Mat<S>(frozen_null<S>(A, piv).topRows(d));
  });
}

static MatrixXd perp_system(const GeometricProblem& p, const std::vector<ScalarField>& cs, const VectorXd& x) {
  const int d = p.dim;
  PrecoPoint<double> pp = preco_at<double>(p, x);
  const Eigen::Index k = static_cast<Eigen::Index>(cs.size());
  MatrixXd A(d, d + k);
  A.leftCols(d) = flat_matrix(pp).transpose();
  if (k > 0) A.rightCols(k) = -stacked_gradients<double>(cs, x).transpose();
  return A;
}

static void build_perp(const GeometricProblem& p, ConstraintLevel& level, const RunOptions& opt) {
  std::vector<ScalarField> cs = fields_of(level.constraints);
  const VectorXd& seed = level.samples.front();
  MatrixXd A = perp_system(p, cs, seed);
  PivotSet piv = choose_pivots(A, opt.tol);
  const int nullity = static_cast<int>(A.cols()) - piv.rank;
  if (piv.rank > 0 && piv.rcond < opt.tol.pivot_rcond)
    throw AssumptionFailure("PivotDegeneracy", "perp-basis pivot block badly conditioned at the level seed");
  for (std::size_t s = 1; s < level.samples.size(); ++s) {
    MatrixXd As = perp_system(p, cs, level.samples[s]);
    int r = numeric_rank(As, opt.tol);
    if (r != piv.rank)
      throw AssumptionFailure("RankDrift", "dimension of the orthogonal complement varies across samples of level " +
                                               std::to_string(level.index));
    double rc = pivot_rcond(As, piv);
    if (piv.rank > 0 && rc < opt.tol.pivot_rcond)
      throw AssumptionFailure("PivotDegeneracy", "frozen perp pivots degenerate at a sample of level " +
                                                     std::to_string(level.index));
  }
  level.perp_rank = nullity;
  level.perp_basis = make_perp_field(p, cs, piv);
  level.candidates.clear();
  MatrixField Z = level.perp_basis;
  for (int j = 0; j < nullity; ++j) {
    level.candidates.push_back(ScalarField(p.dim, [p, Z, j](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> Zx = Z(x);
      return S(rhs_at<S>(p, x).dot(Zx.col(j)));
    }));
  }
  MatrixXd Zs = level.perp_basis(seed);
  if (!cs.empty() && Zs.cols() > 0) {
    MatrixXd T = stacked_gradients<double>(cs, seed) * Zs;
    level.tangent_perp_rank = static_cast<int>(Zs.cols()) - numeric_rank(T, opt.tol);
  } else {
    level.tangent_perp_rank = static_cast<int>(Zs.cols());
  }
  level.rank = cs.empty() ? 0 : numeric_rank(stacked_gradients<double>(cs, seed), opt.tol);
  double res = 0.0;
  for (const auto& x : level.samples) res = std::max(res, cs.empty() ? 0.0 : residual_norm(cs, x));
  level.max_residual = res;
}

ConstraintLevel level_zero(const GeometricProblem& p, const RunOptions& opt) {
  ConstraintLevel lv;
  lv.index = 0;
  lv.samples = sample_level({}, p.seed, opt.rng_seed, opt).points;
  build_perp(p, lv, opt);
  return lv;
}

// Solution of [flat; J] X = [eta - gamma; 0] in the least-squares sense at one point.
static VectorXd pointwise_solution(const GeometricProblem& p, const std::vector<ScalarField>& cs, const VectorXd& x,
                                   double* residual = nullptr) {
  PrecoPoint<double> pp = preco_at<double>(p, x);
  const Eigen::Index d = p.dim, k = static_cast<Eigen::Index>(cs.size());
  MatrixXd M(d + k, d);
  VectorXd b = VectorXd::Zero(d + k);
  M.topRows(d) = flat_matrix(pp);
  b.head(d) = rhs_at<double>(p, x);
  if (k) M.bottomRows(k) = stacked_gradients<double>(cs, x);
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-10);
  VectorXd X = svd.solve(b);
  if (residual) *residual = (M * X - b).norm();
  return X;
}

static void check_characterization_b(const GeometricProblem& p, const ConstraintLevel& previous,
                                     const ConstraintLevel& level, const ConstraintLevel& next,
                                     std::vector<CrossCheck>& checks, const RunOptions& opt) {
  auto b_values = [&](const VectorXd& x) {
    MatrixXd Zp = previous.perp_basis(x);
    MatrixXd J = stacked_gradients<double>(fields_of(level.constraints), x);
    MatrixXd C = null_space(J * Zp, opt.tol);
    MatrixXd G = stacked_gradients<double>(previous.candidates, x);
    VectorXd X = pointwise_solution(p, fields_of(previous.constraints), x);
    VectorXd v = C.transpose() * (G * X);
    return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
  };
  CrossCheck ck;
  ck.name = "characterization_b_generation_" + std::to_string(next.index);
  double worst = 0.0;
  for (const auto& x : next.samples) worst = std::max(worst, b_values(x));
  ck.value = worst;
  ck.passed = worst <= 1e-6;
  // converse: where a new constraint is clearly nonzero, the (b) values must not all vanish
  int mismatches = 0;
  if (!next.new_constraints.empty()) {
    for (const auto& x : level.samples) {
      double a = 0.0;
      for (const auto& c : next.new_constraints) a = std::max(a, std::fabs(c.f(x)));
      if (a > 1e-4 && b_values(x) <= 1e-10) ++mismatches;
    }
  }
  if (mismatches) ck.passed = false;
  ck.detail = "max |(b)| on new samples; " + std::to_string(mismatches) + " converse zero-set mismatches";
  checks.push_back(ck);
}

static void check_characterization_c(const GeometricProblem& p, const ConstraintLevel& level0,
                                     const ConstraintLevel& level1, const ConstraintLevel& level2,
                                     std::vector<CrossCheck>& checks, const RunOptions& opt) {
  const int d = p.dim;
  MatrixXd B = flat_matrix(preco_at<double>(p, level1.samples.front()));
  PivotSet piv = choose_pivots(B, opt.tol);
  VectorField X0(d, [p, piv](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return frozen_solve<S>(flat_matrix(preco_at<S>(p, x)), rhs_at<S>(p, x), piv);
  });
  MatrixField Z = level0.perp_basis;
  const int r = level0.perp_rank;
  std::vector<VectorField> cols;
  std::vector<ScalarField> psi;
  for (int j = 0; j < r; ++j) {
    cols.push_back(VectorField(d, [Z, j](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> m = Z(x);
      return Vec<S>(m.col(j));
    }));
    psi.push_back(ScalarField(d, [p, Z, j](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> m = Z(x);
      return S(Vec<S>(p.gamma(x)).dot(m.col(j)));
    }));
  }
  double worst = 0.0;
  for (const auto& x : level2.samples) {
    MatrixXd J = stacked_gradients<double>(fields_of(level1.constraints), x);
    MatrixXd Zx = Z(x);
    MatrixXd C = null_space(J * Zx, opt.tol);
    VectorXd g = p.gamma(x);
    VectorXd vals(r);
    for (int j = 0; j < r; ++j)
      vals[j] = g.dot(lie_bracket<double>(X0, cols[static_cast<std::size_t>(j)], x)) + lie<double>(psi[static_cast<std::size_t>(j)], p.Y, x);
    VectorXd v = C.transpose() * vals;
    if (v.size()) worst = std::max(worst, v.cwiseAbs().maxCoeff());
  }
  CrossCheck ck;
  ck.name = "characterization_c_generation_2";
  ck.value = worst;
  ck.passed = worst <= 1e-6;
  ck.detail = "i([X,Z])gamma + Y(i(Z)gamma) on tangent combinations at C_2 samples";
  checks.push_back(ck);
}

ConstraintLevel next_generation(const GeometricProblem& p, const ConstraintLevel& level, const RunOptions& opt,
                                std::vector<CrossCheck>* checks, const ConstraintLevel* previous) {
  const int gen = level.index + 1;
  std::vector<Constraint> cands;
  MatrixXd Zs = level.perp_basis(level.samples.front());
  for (std::size_t j = 0; j < level.candidates.size(); ++j) {
    Constraint c;
    c.f = level.candidates[j];
    c.generation = gen;
    c.description = "generation " + std::to_string(gen) + ": i(Z)(eta - gamma) with Z(level seed) = " +
                    describe_vector(Zs.col(static_cast<Eigen::Index>(j)));
    cands.push_back(c);
  }
  Extension ext = extend_stack(level.constraints, cands, level.samples, opt.rng_seed + 1000003ULL * gen, opt);
  ConstraintLevel next;
  next.index = gen;
  next.notes = ext.notes;
  next.dropped_identically_zero = ext.dropped_zero;
  next.dropped_on_level = ext.dropped_on_level;
  if (ext.empty) return next;  // no samples: empty zero set
  next.constraints = level.constraints;
  for (const auto& c : ext.added) next.constraints.push_back(c);
  next.new_constraints = ext.added;
  next.samples = ext.samples.points;
  if (ext.samples.failures)
    next.notes.push_back(std::to_string(ext.samples.failures) + " sample projections did not converge and were discarded");
  if (static_cast<int>(next.constraints.size()) >= p.dim) {
    next.rank = static_cast<int>(next.constraints.size());
    return next;
  }
  build_perp(p, next, opt);
  if (checks && opt.cross_checks && !next.new_constraints.empty()) {
    if (previous) check_characterization_b(p, *previous, level, next, *checks, opt);
    if (previous && level.index == 1) check_characterization_c(p, *previous, level, next, *checks, opt);
  }
  return next;
}

ConstraintLevel first_generation(const GeometricProblem& p, const RunOptions& opt) {
  ConstraintLevel l0 = level_zero(p, opt);
  return next_generation(p, l0, opt);
}

// ---------------------------------------------------------------- dynamics

static MatrixXd dynamics_matrix(const GeometricProblem& p, const std::vector<ScalarField>& cs, const VectorXd& x) {
  const Eigen::Index d = p.dim, k = static_cast<Eigen::Index>(cs.size());
  MatrixXd M(d + k, d);
  M.topRows(d) = flat_matrix(preco_at<double>(p, x));
  if (k) M.bottomRows(k) = stacked_gradients<double>(cs, x);
  return M;
}

DynamicsSolution solve_dynamics(const GeometricProblem& p, const std::vector<Constraint>& tangent_to,
                                const std::vector<VectorXd>& samples, const RunOptions& opt) {
  std::vector<ScalarField> cs = fields_of(tangent_to);
  const int d = p.dim;
  MatrixXd M0 = dynamics_matrix(p, cs, samples.front());
  PivotSet piv = choose_pivots(M0, opt.tol);
  DynamicsSolution dyn;
  dyn.X_part = VectorField(d, [p, cs, piv, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    const Eigen::Index k = static_cast<Eigen::Index>(cs.size());
    Mat<S> M(d + k, d);
    Vec<S> b = Vec<S>::Zero(d + k);
    M.topRows(d) = flat_matrix(preco_at<S>(p, x));
    b.head(d) = rhs_at<S>(p, x);
    if (k) M.bottomRows(k) = stacked_gradients<S>(cs, x);
    return frozen_solve<S>(M, b, piv);
  });
  dyn.gauge_basis = MatrixField(d, [p, cs, piv, d](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    const Eigen::Index k = static_cast<Eigen::Index>(cs.size());
    Mat<S> M(d + k, d);
    M.topRows(d) = flat_matrix(preco_at<S>(p, x));
    if (k) M.bottomRows(k) = stacked_gradients<S>(cs, x);
    return frozen_null<S>(M, piv);
  });
  dyn.gauge_dim = d - piv.rank;
  dyn.X_at_seed = dyn.X_part(samples.front());
  dyn.gauge_at_seed = dyn.gauge_basis(samples.front());
  for (const auto& x : samples) {
    MatrixXd M = dynamics_matrix(p, cs, x);
    VectorXd b = VectorXd::Zero(M.rows());
    b.head(d) = rhs_at<double>(p, x);
    VectorXd X = dyn.X_part(x);
    dyn.max_equation_residual = std::max(dyn.max_equation_residual, (M * X - b).cwiseAbs().maxCoeff());
    if (!cs.empty())
      dyn.max_tangency_drift =
          std::max(dyn.max_tangency_drift, (stacked_gradients<double>(cs, x) * X).cwiseAbs().maxCoeff());
  }
  return dyn;
}

DynamicsSolution stability_solve(const GeometricProblem& p, const DynamicsSolution& dyn,
                                 const std::vector<Constraint>& new_constraints,
                                 const std::vector<VectorXd>& samples, const RunOptions& opt) {
  std::vector<ScalarField> cs = fields_of(new_constraints);
  if (cs.empty() || dyn.gauge_dim == 0) return dyn;
  const int d = p.dim;
  VectorField Xp = dyn.X_part;
  MatrixField G = dyn.gauge_basis;
  MatrixXd A0 = stacked_gradients<double>(cs, samples.front()) * G(samples.front());
  PivotSet piv = choose_pivots(A0, opt.tol);
  DynamicsSolution out;
  out.X_part = VectorField(d, [Xp, G, cs, piv](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> J = stacked_gradients<S>(cs, x);
    Mat<S> Gx = G(x);
    Vec<S> X = Xp(x);
    Mat<S> A = J * Gx;
    Vec<S> b = -(J * X);
    Vec<S> f = frozen_solve<S>(A, b, piv);
    return Vec<S>(X + Gx * f);
  });
  out.gauge_basis = MatrixField(d, [G, cs, piv](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    Mat<S> Gx = G(x);
    Mat<S> A = stacked_gradients<S>(cs, x) * Gx;
    return Mat<S>(Gx * frozen_null<S>(A, piv));
  });
  out.gauge_dim = dyn.gauge_dim - piv.rank;
  out.X_at_seed = out.X_part(samples.front());
  out.gauge_at_seed = out.gauge_basis(samples.front());
  for (const auto& x : samples) {
    VectorXd X = out.X_part(x);
    out.max_tangency_drift =
        std::max(out.max_tangency_drift, (stacked_gradients<double>(cs, x) * X).cwiseAbs().maxCoeff());
  }
  if (out.max_tangency_drift > 1e-7)
    out.notes.push_back("gauge freedom cannot preserve all new constraints; a further generation follows");
  return out;
}

Termination classify_termination(bool projection_failed, int constraint_rank, int dim, bool new_constraints) {
  if (projection_failed) return Termination::Empty;
  if (constraint_rank >= dim) return Termination::ZeroDimensional;
  if (!new_constraints) return Termination::Final;
  return Termination::MaxIterExceeded;
}

static void generation_cross_checks(const GeometricProblem& p, const ConstraintLevel& l0, const ConstraintLevel& l1,
                         AlgorithmReport& rep, const RunOptions& opt) {
  // ker Omega ∩ ker eta = ker omega ∩ ker eta on C_1
  double worst = 0.0;
  for (const auto& x : l1.samples) {
    PointSolution s = solve_pointwise(p, x, opt.tol);
    MatrixXd small = characteristic_space(preco_at<double>(p, x), opt.tol);
    worst = std::max({worst, containment_residual(s.nullspace, small, opt.tol),
                      containment_residual(small, s.nullspace, opt.tol)});
    if (s.nullspace.cols() != small.cols()) worst = std::max(worst, 1.0);
  }
  rep.checks.push_back({"kernel_equality_on_C1", worst <= opt.tol.subspace, worst,
                        "ker Omega ∩ ker eta versus ker omega ∩ ker eta"});

  // i(Y)i(Z) d gamma on C_1 for Z, Y in ker omega ∩ ker eta, d gamma by central differences
  double worst_c = 0.0;
  const double h = 1e-5;
  for (const auto& x : l1.samples) {
    MatrixXd K = characteristic_space(preco_at<double>(p, x), opt.tol);
    if (K.cols() == 0) continue;
    MatrixXd Dg(p.dim, p.dim);  // Dg(i, j) = d_i gamma_j
    for (int i = 0; i < p.dim; ++i) {
      VectorXd e = VectorXd::Zero(p.dim);
      e[i] = h;
      Dg.row(i) = (VectorXd(p.gamma(VectorXd(x + e))) - VectorXd(p.gamma(VectorXd(x - e)))).transpose() / (2 * h);
    }
    MatrixXd dg = Dg - Dg.transpose();
    worst_c = std::max(worst_c, (K.transpose() * dg * K).cwiseAbs().maxCoeff());
  }
  rep.checks.push_back({"d_gamma_on_characteristic_pairs", worst_c <= 1e-6, worst_c,
                        "i(Y)i(Z) d gamma for Z, Y in ker omega ∩ ker eta on C_1"});

  // stability matrix over directions transverse to C_1
  const VectorXd& x1 = l1.samples.front();
  MatrixXd Z = l0.perp_basis(x1);
  if (Z.cols() == 0 || l1.constraints.empty()) return;
  MatrixXd T = stacked_gradients<double>(fields_of(l1.constraints), x1) * Z;
  MatrixXd trans = range_basis(T.transpose(), opt.tol);
  const int s = static_cast<int>(trans.cols());
  if (s == 0) return;
  MatrixField Zf = l0.perp_basis;
  MatrixXd A(s, s);
  for (int kp = 0; kp < s; ++kp) {
    VectorXd c = trans.col(kp);
    ScalarField psi(p.dim, [p, Zf, c](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      Mat<S> m = Zf(x);
      Vec<S> z = m * c.template cast<S>();
      return S(Vec<S>(p.gamma(x)).dot(z));
    });
    for (int k = 0; k < s; ++k) {
      VectorXd dir = Z * trans.col(k);
      A(k, kp) = directional<double>(psi, x1, dir);
    }
  }
  int r = numeric_rank(A, opt.tol);
  bool ok = r == s;
  rep.checks.push_back({"stability_matrix_regular", ok, reciprocal_condition(A),
                        "L(Z_k) i(Z_k') gamma over " + std::to_string(s) + " directions transverse to C_1"});
  if (!ok) rep.warnings.push_back("SingularStabilityMatrix: the stability matrix on C_1 has rank " + std::to_string(r) +
                                  " < " + std::to_string(s));
}

AlgorithmReport run(const GeometricProblem& p, const RunOptions& opt) {
  AlgorithmReport rep;
  rep.levels.push_back(level_zero(p, opt));
  check_connection(p, rep.levels.front().samples);
  const int max_iter = opt.max_iter < 0 ? p.dim : opt.max_iter;
  bool done = false;
  for (int it = 0; it < max_iter && !done; ++it) {
    const ConstraintLevel& cur = rep.levels.back();
    const ConstraintLevel* prev = rep.levels.size() >= 2 ? &rep.levels[rep.levels.size() - 2] : nullptr;
    ConstraintLevel next = next_generation(p, cur, opt, &rep.checks, prev);
    for (const auto& n : next.notes) rep.notes.push_back("level " + std::to_string(next.index) + ": " + n);
    if (next.samples.empty()) {
      rep.status = Termination::Empty;
      rep.final_level = cur.index;
      rep.levels.push_back(next);
      done = true;
    } else if (next.new_constraints.empty()) {
      rep.status = Termination::Final;
      rep.final_level = cur.index;
      done = true;
    } else {
      rep.levels.push_back(next);
      if (static_cast<int>(next.constraints.size()) >= p.dim) {
        rep.status = Termination::ZeroDimensional;
        rep.final_level = next.index;
        done = true;
      }
    }
  }
  if (!done) {
    rep.status = Termination::MaxIterExceeded;
    rep.final_level = rep.levels.back().index;
  }
  if (rep.status != Termination::Final) return rep;

  const ConstraintLevel& fin = rep.final();
  rep.dynamics = solve_dynamics(p, fin.constraints, fin.samples, opt);
  rep.checks.push_back({"final_tangency", rep.dynamics->max_tangency_drift <= 1e-7, rep.dynamics->max_tangency_drift,
                        "L(X) chi at final samples"});
  rep.checks.push_back({"final_equations", rep.dynamics->max_equation_residual <= 1e-8,
                        rep.dynamics->max_equation_residual, "flat(X) = eta - gamma at final samples"});

  if (opt.cross_checks && rep.levels.size() >= 2 && !rep.levels[1].samples.empty()) {
    generation_cross_checks(p, rep.levels[0], rep.levels[1], rep, opt);
    // stability route: solutions on C_1, then gauge fixed by the remaining constraints
    const ConstraintLevel& l1 = rep.levels[1];
    DynamicsSolution d0 = solve_dynamics(p, {}, l1.samples, opt);
    DynamicsSolution ds = stability_solve(p, d0, fin.constraints, fin.samples, opt);
    double diff = 0.0;
    for (const auto& x : fin.samples) {
      VectorXd a = rep.dynamics->X_part(x), b = ds.X_part(x);
      MatrixXd G = rep.dynamics->gauge_basis(x);
      VectorXd dlt = a - b;
      if (G.cols()) {
        MatrixXd Q = range_basis(G, opt.tol);
        dlt -= Q * (Q.transpose() * dlt);
      }
      diff = std::max(diff, dlt.cwiseAbs().maxCoeff());
    }
    bool ok = diff <= 1e-7 && ds.gauge_dim == rep.dynamics->gauge_dim;
    rep.checks.push_back({"stability_solve_agrees", ok, diff,
                          "gauge dims " + std::to_string(ds.gauge_dim) + " vs " + std::to_string(rep.dynamics->gauge_dim)});
  }
  return rep;
}

double cross_vanishing(const AlgorithmReport& a, const AlgorithmReport& b) {
  double worst = 0.0;
  for (const auto& c : a.final().constraints) worst = std::max(worst, max_abs_on(c.f, b.final().samples));
  for (const auto& c : b.final().constraints) worst = std::max(worst, max_abs_on(c.f, a.final().samples));
  return worst;
}

}  // namespace jetflow
