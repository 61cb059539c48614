#ifndef JETFLOW_DUAL_HPP
#define JETFLOW_DUAL_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <type_traits>

#include <Eigen/Core>

namespace jetflow {

// Forward-mode dual number. Nesting Dual<Dual<double>> gives second
// derivatives, and so on.
template <class T>
struct Dual {
  T v{};
  T d{};

  Dual() : v(0.0), d(0.0) {}
  Dual(double c) : v(c), d(0.0) {}
  Dual(int c) : v(static_cast<double>(c)), d(0.0) {}
  Dual(const T& value, const T& deriv) : v(value), d(deriv) {}

  static Dual constant(const T& value) { return Dual(value, T(0.0)); }

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
  Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    T inv = T(1.0) / b.v;
    T q = a.v * inv;
    return {q, (a.d - q * b.d) * inv};
  }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator+(const Dual& a) { return a; }

  friend Dual operator+(const Dual& a, double c) { return {a.v + c, a.d}; }
  friend Dual operator+(double c, const Dual& a) { return {a.v + c, a.d}; }
  friend Dual operator-(const Dual& a, double c) { return {a.v - c, a.d}; }
  friend Dual operator-(double c, const Dual& a) { return {c - a.v, -a.d}; }
  friend Dual operator*(const Dual& a, double c) { return {a.v * c, a.d * c}; }
  friend Dual operator*(double c, const Dual& a) { return {a.v * c, a.d * c}; }
  friend Dual operator/(const Dual& a, double c) { return {a.v / c, a.d / c}; }
  friend Dual operator/(double c, const Dual& a) { return Dual(c) / a; }
};

template <class T> struct dual_depth : std::integral_constant<int, 0> {};
template <class T> struct dual_depth<Dual<T>> : std::integral_constant<int, 1 + dual_depth<T>::value> {};
template <class T> inline constexpr int dual_depth_v = dual_depth<T>::value;

inline double primal(double x) { return x; }
template <class T> double primal(const Dual<T>& x) { return primal(x.v); }

template <class T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return primal(a) < primal(b); }
template <class T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return primal(a) > primal(b); }
template <class T> bool operator<=(const Dual<T>& a, const Dual<T>& b) { return primal(a) <= primal(b); }
template <class T> bool operator>=(const Dual<T>& a, const Dual<T>& b) { return primal(a) >= primal(b); }
template <class T> bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.v == b.v && a.d == b.d; }
template <class T> bool operator!=(const Dual<T>& a, const Dual<T>& b) { return !(a == b); }

using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;

template <class T> Dual<T> sin(const Dual<T>& a) { return {sin(a.v), cos(a.v) * a.d}; }
template <class T> Dual<T> cos(const Dual<T>& a) { return {cos(a.v), -(sin(a.v) * a.d)}; }
template <class T> Dual<T> exp(const Dual<T>& a) {
  T e = exp(a.v);
  return {e, e * a.d};
}
template <class T> Dual<T> log(const Dual<T>& a) { return {log(a.v), a.d / a.v}; }
template <class T> Dual<T> sqrt(const Dual<T>& a) {
  T s = sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
template <class T> Dual<T> abs(const Dual<T>& a) { return primal(a) < 0.0 ? -a : a; }
template <class T> Dual<T> abs2(const Dual<T>& a) { return a * a; }

// Integer power by repeated squaring; valid for any sign of the base.
template <class S> S ipow(const S& x, long k) {
  if (k < 0) return S(1.0) / ipow(x, -k);
  S result(1.0), base = x;
  while (k > 0) {
    if (k & 1) result = result * base;
    base = base * base;
    k >>= 1;
  }
  return result;
}

// Real power for a positive base and non-integer exponent.
inline double rpow(double x, double r) { return std::pow(x, r); }
template <class T> Dual<T> rpow(const Dual<T>& a, double r) {
  T p = rpow(a.v, r - 1.0);
  return {p * a.v, r * p * a.d};
}

template <class S> S lift_constant(double c) { return S(c); }

}  // namespace jetflow

namespace Eigen {
template <class T>
struct NumTraits<jetflow::Dual<T>> : GenericNumTraits<jetflow::Dual<T>> {
  using Real = jetflow::Dual<T>;
  using NonInteger = jetflow::Dual<T>;
  using Nested = jetflow::Dual<T>;
  using Literal = jetflow::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost
  };
  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(std::numeric_limits<double>::lowest()); }
  static inline int digits10() { return std::numeric_limits<double>::digits10; }
};
}  // namespace Eigen

#endif
