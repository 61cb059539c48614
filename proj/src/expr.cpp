#include "jetflow/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

namespace jetflow {

SymbolTable::SymbolTable(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!slots_.emplace(names_[i], static_cast<int>(i)).second)
      throw InputError("duplicate symbol '" + names_[i] + "'");
  }
}

static std::vector<std::string> chart_names(int n, const char* fiber) {
  std::vector<std::string> names{"t"};
  for (int i = 1; i <= n; ++i) names.push_back("q" + std::to_string(i));
  if (fiber)
    for (int i = 1; i <= n; ++i) names.push_back(fiber + std::to_string(i));
  return names;
}

SymbolTable SymbolTable::lagrangian(int n) { return SymbolTable(chart_names(n, "v")); }
SymbolTable SymbolTable::momentum(int n) { return SymbolTable(chart_names(n, "p")); }
SymbolTable SymbolTable::configuration(int n) { return SymbolTable(chart_names(n, nullptr)); }

int SymbolTable::index(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? -1 : it->second;
}

// ---------------------------------------------------------------- construction

static Expr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

static bool const_value(const Expr& e, double& c) {
  if (e->kind != NodeKind::Const) return false;
  c = e->value;
  return true;
}

bool is_constant(const Expr& e, double c) { return e->kind == NodeKind::Const && e->value == c; }

static Expr folded(double v, Expr fallback) {
  return std::isfinite(v) ? constant(v) : std::move(fallback);
}

Expr constant(double c) {
  Node n;
  n.kind = NodeKind::Const;
  n.value = c;
  return make(std::move(n));
}

Expr variable(int index, const std::string& name) {
  Node n;
  n.kind = NodeKind::Var;
  n.var = index;
  n.name = name;
  return make(std::move(n));
}

static Expr binary(NodeKind k, Expr a, Expr b) {
  Node n;
  n.kind = k;
  n.a = std::move(a);
  n.b = std::move(b);
  return make(std::move(n));
}

Expr neg(Expr a) {
  double c;
  if (const_value(a, c)) return constant(-c);
  if (a->kind == NodeKind::Neg) return a->a;
  Node n;
  n.kind = NodeKind::Neg;
  n.a = std::move(a);
  return make(std::move(n));
}

Expr add(Expr a, Expr b) {
  double x, y;
  bool ca = const_value(a, x), cb = const_value(b, y);
  if (ca && cb) return folded(x + y, binary(NodeKind::Add, a, b));
  if (ca && x == 0.0) return b;
  if (cb && y == 0.0) return a;
  if (b->kind == NodeKind::Neg) return sub(std::move(a), b->a);
  return binary(NodeKind::Add, std::move(a), std::move(b));
}

Expr sub(Expr a, Expr b) {
  double x, y;
  bool ca = const_value(a, x), cb = const_value(b, y);
  if (ca && cb) return folded(x - y, binary(NodeKind::Sub, a, b));
  if (cb && y == 0.0) return a;
  if (ca && x == 0.0) return neg(std::move(b));
  if (b->kind == NodeKind::Neg) return add(std::move(a), b->a);
  return binary(NodeKind::Sub, std::move(a), std::move(b));
}

Expr mul(Expr a, Expr b) {
  double x, y;
  bool ca = const_value(a, x), cb = const_value(b, y);
  if (ca && cb) return folded(x * y, binary(NodeKind::Mul, a, b));
  if ((ca && x == 0.0) || (cb && y == 0.0)) return constant(0.0);
  if (ca && x == 1.0) return b;
  if (cb && y == 1.0) return a;
  if (cb) return mul(b, a);
  double z;
  if (ca && b->kind == NodeKind::Mul && const_value(b->a, z)) return mul(constant(x * z), b->b);
  return binary(NodeKind::Mul, std::move(a), std::move(b));
}

Expr div(Expr a, Expr b) {
  double x, y;
  bool ca = const_value(a, x), cb = const_value(b, y);
  if (ca && cb && y != 0.0) return folded(x / y, binary(NodeKind::Div, a, b));
  if (cb && y == 1.0) return a;
  if (ca && x == 0.0 && !(cb && y == 0.0)) return constant(0.0);
  return binary(NodeKind::Div, std::move(a), std::move(b));
}

static bool has_variables(const Expr& e) {
  if (!e) return false;
  if (e->kind == NodeKind::Var) return true;
  return has_variables(e->a) || (e->kind != NodeKind::Pow && has_variables(e->b));
}

// Smallest denominator q <= 1000 with r*q integral; false when r is not rational at that scale.
static bool rational_exponent(double r) {
  for (int q = 1; q <= 1000; ++q) {
    double s = r * q;
    if (std::fabs(s - std::round(s)) <= 1e-9 * q) return true;
  }
  return false;
}

Expr pow(Expr base, Expr exponent) {
  if (has_variables(exponent)) throw InputError("exponent must be a constant");
  double r = eval(exponent, Vec<double>());
  if (!std::isfinite(r) || !rational_exponent(r)) throw InputError("exponent must be a rational constant");
  if (r == 1.0) return base;
  if (r == 0.0) return constant(1.0);
  double c;
  if (const_value(base, c)) {
    double v = std::pow(c, r);
    if (std::isfinite(v) && (c > 0.0 || std::round(r) == r)) return constant(v);
  }
  Node n;
  n.kind = NodeKind::Pow;
  n.a = std::move(base);
  n.b = std::move(exponent);
  n.value = r;
  n.integer_exponent = std::fabs(r - std::round(r)) <= 1e-12 && std::fabs(r) < 1e9;
  n.int_exponent = n.integer_exponent ? static_cast<long>(std::llround(r)) : 0;
  return make(std::move(n));
}

Expr pow(Expr base, double exponent) { return pow(std::move(base), constant(exponent)); }

Expr apply(NodeKind fn, Expr a) {
  Node n;
  n.kind = fn;
  n.a = std::move(a);
  return make(std::move(n));
}

// ---------------------------------------------------------------- parsing

namespace {

struct Parser {
  const std::string& src;
  const SymbolTable& table;
  std::size_t pos = 0;

  void skip() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }
  bool peek(char c) {
    skip();
    return pos < src.size() && src[pos] == c;
  }
  bool accept(char c) {
    if (peek(c)) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos);
  }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (accept('+')) lhs = binary(NodeKind::Add, lhs, term());
      else if (accept('-')) lhs = binary(NodeKind::Sub, lhs, term());
      else return lhs;
    }
  }

  Expr term() {
    Expr lhs = factor();
    for (;;) {
      if (accept('*')) lhs = binary(NodeKind::Mul, lhs, factor());
      else if (accept('/')) lhs = binary(NodeKind::Div, lhs, factor());
      else return lhs;
    }
  }

  // Unary minus sits between '^' and '*': -x^2 is -(x^2).
  Expr factor() {
    if (accept('-')) {
      Node n;
      n.kind = NodeKind::Neg;
      n.a = factor();
      return make(std::move(n));
    }
    return power();
  }

  Expr power() {
    Expr b = base();
    if (!accept('^')) return b;
    std::size_t at = pos;
    Expr e = factor();
    if (has_variables(e)) throw ParseError("exponent must be a constant", at);
    double r = eval(e, Vec<double>());
    if (!std::isfinite(r) || !rational_exponent(r)) throw ParseError("exponent must be a rational constant", at);
    Node n;
    n.kind = NodeKind::Pow;
    n.a = b;
    n.b = e;
    n.value = r;
    n.integer_exponent = std::fabs(r - std::round(r)) <= 1e-12 && std::fabs(r) < 1e9;
    n.int_exponent = n.integer_exponent ? static_cast<long>(std::llround(r)) : 0;
    return make(std::move(n));
  }

  bool number_at(std::size_t p) const {
    return p < src.size() && (std::isdigit(static_cast<unsigned char>(src[p])) ||
                              (src[p] == '.' && p + 1 < src.size() &&
                               std::isdigit(static_cast<unsigned char>(src[p + 1]))));
  }

  double number() {
    skip();
    std::size_t start = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos < src.size() && src[pos] == '.') {
      ++pos;
      while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    if (pos < src.size() && (src[pos] == 'e' || src[pos] == 'E')) {
      std::size_t save = pos++;
      if (pos < src.size() && (src[pos] == '+' || src[pos] == '-')) ++pos;
      if (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) {
        while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
      } else {
        pos = save;
      }
    }
    double v = 0.0;
    auto res = std::from_chars(src.data() + start, src.data() + pos, v);
    if (res.ec != std::errc() || res.ptr != src.data() + pos) throw ParseError("malformed number", start);
    return v;
  }

  // "(-c)" with a bare numeric literal is a negative constant.
  bool negative_literal(double& value) {
    std::size_t save = pos;
    ++pos;  // past '('
    skip();
    if (pos < src.size() && src[pos] == '-') {
      ++pos;
      skip();
      if (number_at(pos)) {
        double v = number();
        if (accept(')')) {
          value = -v;
          return true;
        }
      }
    }
    pos = save;
    return false;
  }

  Expr base() {
    skip();
    if (pos >= src.size()) throw ParseError("unexpected end of input", pos);
    char c = src[pos];
    if (number_at(pos)) return constant(number());
    if (c == '(') {
      double v;
      if (negative_literal(v)) return constant(v);
      ++pos;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
        ++pos;
      std::string id = src.substr(start, pos - start);
      static const std::pair<const char*, NodeKind> funcs[] = {
          {"sin", NodeKind::Sin}, {"cos", NodeKind::Cos},   {"exp", NodeKind::Exp},
          {"log", NodeKind::Log}, {"sqrt", NodeKind::Sqrt}};
      for (const auto& [fname, kind] : funcs) {
        if (id == fname && peek('(')) {
          ++pos;
          Expr arg = expr();
          expect(')');
          return apply(kind, arg);
        }
      }
      int slot = table.index(id);
      if (slot < 0) throw UnknownSymbol(id, start);
      return variable(slot, id);
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos);
  }
};

}  // namespace

Expr parse(const std::string& source, const SymbolTable& table) {
  Parser p{source, table};
  Expr e = p.expr();
  p.skip();
  if (p.pos != source.size()) throw ParseError("trailing input", p.pos);
  return e;
}

// ---------------------------------------------------------------- printing

static int precedence(const Expr& e) {
  switch (e->kind) {
    case NodeKind::Add:
    case NodeKind::Sub:
      return 1;
    case NodeKind::Mul:
    case NodeKind::Div:
      return 2;
    case NodeKind::Neg:
      return 3;
    case NodeKind::Pow:
      return 4;
    default:
      return 5;
  }
}

static std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

static std::string wrap(const Expr& e, bool paren) {
  std::string s = to_string(e);
  return paren ? "(" + s + ")" : s;
}

std::string to_string(const Expr& e) {
  int p = precedence(e);
  switch (e->kind) {
    case NodeKind::Const:
      return e->value < 0.0 || std::signbit(e->value) ? "(-" + format_number(-e->value) + ")"
                                                       : format_number(e->value);
    case NodeKind::Var:
      return e->name;
    case NodeKind::Neg:
      return "-" + wrap(e->a, precedence(e->a) < 3);
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
    case NodeKind::Div: {
      const char* op = e->kind == NodeKind::Add   ? " + "
                       : e->kind == NodeKind::Sub ? " - "
                       : e->kind == NodeKind::Mul ? "*"
                                                  : "/";
      return wrap(e->a, precedence(e->a) < p) + op + wrap(e->b, precedence(e->b) <= p);
    }
    case NodeKind::Pow:
      return wrap(e->a, precedence(e->a) <= 4) + "^" + wrap(e->b, precedence(e->b) < 3);
    case NodeKind::Sin:
      return "sin(" + to_string(e->a) + ")";
    case NodeKind::Cos:
      return "cos(" + to_string(e->a) + ")";
    case NodeKind::Exp:
      return "exp(" + to_string(e->a) + ")";
    case NodeKind::Log:
      return "log(" + to_string(e->a) + ")";
    case NodeKind::Sqrt:
      return "sqrt(" + to_string(e->a) + ")";
  }
  return "?";
}

// ---------------------------------------------------------------- calculus

Expr diff(const Expr& e, int var) {
  switch (e->kind) {
    case NodeKind::Const:
      return constant(0.0);
    case NodeKind::Var:
      return constant(e->var == var ? 1.0 : 0.0);
    case NodeKind::Neg:
      return neg(diff(e->a, var));
    case NodeKind::Add:
      return add(diff(e->a, var), diff(e->b, var));
    case NodeKind::Sub:
      return sub(diff(e->a, var), diff(e->b, var));
    case NodeKind::Mul:
      return add(mul(diff(e->a, var), e->b), mul(e->a, diff(e->b, var)));
    case NodeKind::Div:
      return div(sub(mul(diff(e->a, var), e->b), mul(e->a, diff(e->b, var))), pow(e->b, 2.0));
    case NodeKind::Pow: {
      double r = e->value;
      return mul(mul(constant(r), pow(e->a, r - 1.0)), diff(e->a, var));
    }
    case NodeKind::Sin:
      return mul(apply(NodeKind::Cos, e->a), diff(e->a, var));
    case NodeKind::Cos:
      return mul(neg(apply(NodeKind::Sin, e->a)), diff(e->a, var));
    case NodeKind::Exp:
      return mul(e, diff(e->a, var));
    case NodeKind::Log:
      return div(diff(e->a, var), e->a);
    case NodeKind::Sqrt:
      return div(diff(e->a, var), mul(constant(2.0), e));
  }
  return constant(0.0);
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (!a || !b) return !a && !b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case NodeKind::Const:
      return a->value == b->value;
    case NodeKind::Var:
      return a->var == b->var && a->name == b->name;
    default:
      return structurally_equal(a->a, b->a) && structurally_equal(a->b, b->b);
  }
}

bool depends_on(const Expr& e, int var) {
  if (!e) return false;
  if (e->kind == NodeKind::Var) return e->var == var;
  return depends_on(e->a, var) || (e->kind != NodeKind::Pow && depends_on(e->b, var));
}

Expr substitute(const Expr& e, const std::vector<Expr>& values) {
  switch (e->kind) {
    case NodeKind::Const:
      return e;
    case NodeKind::Var: {
      auto i = static_cast<std::size_t>(e->var);
      return i < values.size() && values[i] ? values[i] : e;
    }
    case NodeKind::Neg:
      return neg(substitute(e->a, values));
    case NodeKind::Add:
      return add(substitute(e->a, values), substitute(e->b, values));
    case NodeKind::Sub:
      return sub(substitute(e->a, values), substitute(e->b, values));
    case NodeKind::Mul:
      return mul(substitute(e->a, values), substitute(e->b, values));
    case NodeKind::Div:
      return div(substitute(e->a, values), substitute(e->b, values));
    case NodeKind::Pow:
      return pow(substitute(e->a, values), e->b);
    default:
      return apply(e->kind, substitute(e->a, values));
  }
}

DualValue eval_dual(const ScalarField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& seed) {
  D1 r = f(lift_point<double>(x, seed));
  return {r.v, r.d};
}

}  // namespace jetflow
