#ifndef JETFLOW_EXPR_HPP
#define JETFLOW_EXPR_HPP

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "jetflow/errors.hpp"
#include "jetflow/field.hpp"

namespace jetflow {

class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(std::vector<std::string> names);

  static SymbolTable lagrangian(int n);     // t, q1..qn, v1..vn
  static SymbolTable momentum(int n);       // t, q1..qn, p1..pn
  static SymbolTable configuration(int n);  // t, q1..qn

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& names() const { return names_; }
  int index(const std::string& name) const;  // -1 when absent
  bool contains(const std::string& name) const { return index(name) >= 0; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> slots_;
};

enum class NodeKind { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Log, Sqrt };

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind = NodeKind::Const;
  double value = 0.0;  // Const payload; for Pow the exponent value
  int var = -1;
  std::string name;
  Expr a, b;  // operands; for Pow b is the constant exponent subtree
  bool integer_exponent = false;
  long int_exponent = 0;
};

// Smart constructors; fold constants and 0/1 identities only.
Expr constant(double c);
Expr variable(int index, const std::string& name);
Expr neg(Expr a);
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);
Expr div(Expr a, Expr b);
Expr pow(Expr base, Expr exponent);  // exponent must be a rational constant
Expr pow(Expr base, double exponent);
Expr apply(NodeKind fn, Expr a);

Expr parse(const std::string& source, const SymbolTable& table);
std::string to_string(const Expr& e);
Expr diff(const Expr& e, int var);
bool structurally_equal(const Expr& a, const Expr& b);
bool depends_on(const Expr& e, int var);
bool is_constant(const Expr& e, double c);
// Replaces variable i by values[i] wherever values[i] is non-null.
Expr substitute(const Expr& e, const std::vector<Expr>& values);

template <class S> S eval(const Node& n, const Vec<S>& x) {
  switch (n.kind) {
    case NodeKind::Const:
      return S(n.value);
    case NodeKind::Var:
      return x[n.var];
    case NodeKind::Neg:
      return -eval(*n.a, x);
    case NodeKind::Add:
      return eval(*n.a, x) + eval(*n.b, x);
    case NodeKind::Sub:
      return eval(*n.a, x) - eval(*n.b, x);
    case NodeKind::Mul:
      return eval(*n.a, x) * eval(*n.b, x);
    case NodeKind::Div: {
      S den = eval(*n.b, x);
      if (primal(den) == 0.0) throw DomainError("division by zero");
      return eval(*n.a, x) / den;
    }
    case NodeKind::Pow: {
      S base = eval(*n.a, x);
      if (n.integer_exponent) return ipow(base, n.int_exponent);
      if (!(primal(base) > 0.0)) throw DomainError("non-integer power of a nonpositive base");
      return rpow(base, n.value);
    }
    case NodeKind::Sin: {
      using std::sin;
      return sin(eval(*n.a, x));
    }
    case NodeKind::Cos: {
      using std::cos;
      return cos(eval(*n.a, x));
    }
    case NodeKind::Exp: {
      using std::exp;
      return exp(eval(*n.a, x));
    }
    case NodeKind::Log: {
      using std::log;
      S u = eval(*n.a, x);
      if (!(primal(u) > 0.0)) throw DomainError("log of a nonpositive argument");
      return log(u);
    }
    case NodeKind::Sqrt: {
      using std::sqrt;
      S u = eval(*n.a, x);
      if (!(primal(u) > 0.0)) throw DomainError("sqrt of a nonpositive argument");
      return sqrt(u);
    }
  }
  return S(0.0);
}

template <class S> S eval(const Expr& e, const Vec<S>& x) { return eval(*e, x); }

inline ScalarField to_field(const Expr& e, int arity) {
  return ScalarField(arity, [e](const auto& x) { return eval(e, x); });
}

struct DualValue {
  double value;
  double derivative;
};

// Value and directional derivative in one forward pass.
DualValue eval_dual(const ScalarField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& seed);

}  // namespace jetflow

#endif
