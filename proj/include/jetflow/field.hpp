#ifndef JETFLOW_FIELD_HPP
#define JETFLOW_FIELD_HPP

#include <functional>
#include <memory>
#include <stdexcept>
#include <tuple>
#include <utility>

#include <Eigen/Core>

#include "jetflow/dual.hpp"

namespace jetflow {

template <class S> using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S> using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;
using D4 = Dual<D3>;
using D5 = Dual<D4>;

inline constexpr int kMaxDualDepth = 5;

struct DepthExceeded : std::runtime_error {
  DepthExceeded() : std::runtime_error("derivative nesting exceeds the supported dual depth") {}
};

template <class S> inline constexpr bool can_lift = dual_depth_v<S> < kMaxDualDepth;

template <class S> using ScalarOut = S;

// Type-erased evaluator available at every supported scalar type.
// Built from a generic callable; immutable and shareable across threads.
template <template <class> class Out>
class BasicField {
  template <class S> using Fn = std::function<Out<S>(const Vec<S>&)>;
  using Table = std::tuple<Fn<double>, Fn<D1>, Fn<D2>, Fn<D3>, Fn<D4>, Fn<D5>>;

  std::shared_ptr<const Table> fns_;
  int arity_ = 0;

  template <class S, class P> static Fn<S> wrap(const P& p) {
    return [p](const Vec<S>& x) -> Out<S> { return (*p)(x); };
  }

 public:
  BasicField() = default;

  template <class F>
  BasicField(int arity, F f) : arity_(arity) {
    auto p = std::make_shared<const F>(std::move(f));
    fns_ = std::make_shared<const Table>(wrap<double>(p), wrap<D1>(p), wrap<D2>(p), wrap<D3>(p),
                                         wrap<D4>(p), wrap<D5>(p));
  }

  template <class S> Out<S> operator()(const Vec<S>& x) const {
    return std::get<Fn<S>>(*fns_)(x);
  }

  int arity() const { return arity_; }
  explicit operator bool() const { return static_cast<bool>(fns_); }
};

using ScalarField = BasicField<ScalarOut>;
using VectorField = BasicField<Vec>;
using MatrixField = BasicField<Mat>;

template <class S> Vec<Dual<S>> lift_point(const Vec<S>& x) {
  Vec<Dual<S>> y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = Dual<S>(x[i], S(0.0));
  return y;
}

template <class S> Vec<Dual<S>> lift_point(const Vec<S>& x, const Vec<S>& dir) {
  Vec<Dual<S>> y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = Dual<S>(x[i], dir[i]);
  return y;
}

template <class S> Vec<S> value_part(const Vec<Dual<S>>& y) {
  Vec<S> r(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) r[i] = y[i].v;
  return r;
}

template <class S> Vec<S> deriv_part(const Vec<Dual<S>>& y) {
  Vec<S> r(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) r[i] = y[i].d;
  return r;
}

template <class S> Mat<S> deriv_part(const Mat<Dual<S>>& y) {
  Mat<S> r(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i) r(i, j) = y(i, j).d;
  return r;
}

// Derivative of f at x along dir.
template <class S> S directional(const ScalarField& f, const Vec<S>& x, const Vec<S>& dir) {
  if constexpr (!can_lift<S>) {
    throw DepthExceeded();
  } else {
    return f(lift_point(x, dir)).d;
  }
}

template <class S> Vec<S> directional(const VectorField& f, const Vec<S>& x, const Vec<S>& dir) {
  if constexpr (!can_lift<S>) {
    throw DepthExceeded();
  } else {
    return deriv_part(f(lift_point(x, dir)));
  }
}

template <class S> Mat<S> directional(const MatrixField& f, const Vec<S>& x, const Vec<S>& dir) {
  if constexpr (!can_lift<S>) {
    throw DepthExceeded();
  } else {
    return deriv_part(f(lift_point(x, dir)));
  }
}

template <class S> Vec<S> gradient(const ScalarField& f, const Vec<S>& x) {
  if constexpr (!can_lift<S>) {
    throw DepthExceeded();
  } else {
    Vec<Dual<S>> y = lift_point(x);
    Vec<S> g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      y[j].d = S(1.0);
      g[j] = f(y).d;
      y[j].d = S(0.0);
    }
    return g;
  }
}

// Column j holds d F / d x_j.
template <class S> Mat<S> jacobian(const VectorField& F, const Vec<S>& x) {
  if constexpr (!can_lift<S>) {
    throw DepthExceeded();
  } else {
    Vec<Dual<S>> y = lift_point(x);
    Mat<S> J;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      y[j].d = S(1.0);
      Vec<S> col = deriv_part(F(y));
      if (j == 0) J.resize(col.size(), x.size());
      J.col(j) = col;
      y[j].d = S(0.0);
    }
    return J;
  }
}

// Rows are gradients of the listed scalar fields.
template <class S, class Range> Mat<S> stacked_gradients(const Range& fields, const Vec<S>& x) {
  Mat<S> J(static_cast<Eigen::Index>(fields.size()), x.size());
  Eigen::Index i = 0;
  for (const auto& f : fields) J.row(i++) = gradient(f, x).transpose();
  return J;
}

// Lie derivative X(f).
template <class S> S lie(const ScalarField& f, const VectorField& X, const Vec<S>& x) {
  return directional(f, x, Vec<S>(X(x)));
}

// [X, Z] = DZ.X - DX.Z
template <class S> Vec<S> lie_bracket(const VectorField& X, const VectorField& Z, const Vec<S>& x) {
  Vec<S> xv = X(x), zv = Z(x);
  return directional(Z, x, xv) - directional(X, x, zv);
}

inline ScalarField constant_field(int arity, double c) {
  return ScalarField(arity, [c](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return S(c);
  });
}

inline ScalarField coordinate_field(int arity, int index) {
  return ScalarField(arity, [index](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return S(x[index]);
  });
}

inline VectorField constant_vector_field(const Eigen::VectorXd& c) {
  return VectorField(static_cast<int>(c.size()), [c](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    return Vec<S>(c.template cast<S>());
  });
}

template <class S> Vec<S> cast_point(const Eigen::VectorXd& x) { return x.template cast<S>(); }

inline Eigen::VectorXd primal(const Vec<double>& x) { return x; }
template <class T> Eigen::VectorXd primal(const Vec<Dual<T>>& x) {
  Eigen::VectorXd r(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) r[i] = primal(x[i]);
  return r;
}
inline Eigen::MatrixXd primal(const Mat<double>& x) { return x; }
template <class T> Eigen::MatrixXd primal(const Mat<Dual<T>>& x) {
  Eigen::MatrixXd r(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) r(i, j) = primal(x(i, j));
  return r;
}

}  // namespace jetflow

#endif
