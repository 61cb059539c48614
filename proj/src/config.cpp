#include "jetflow/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "jetflow/expr.hpp"

namespace jetflow {

namespace {

struct LineReader {
  const std::string& s;
  std::size_t i = 0;
  int line;

  [[noreturn]] void fail(const std::string& msg) const {
    throw InputError("config line " + std::to_string(line) + ": " + msg);
  }
  void skip_ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  bool at_end() {
    skip_ws();
    return i >= s.size() || s[i] == '#';
  }
  std::string string_lit() {
    ++i;  // opening quote
    std::string out;
    while (i < s.size() && s[i] != '"') {
      if (s[i] == '\\' && i + 1 < s.size()) ++i;
      out += s[i++];
    }
    if (i >= s.size()) fail("unterminated string");
    ++i;
    return out;
  }
  double number() {
    std::size_t start = i;
    while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '.' || s[i] == '-' ||
                            s[i] == '+' || s[i] == '_'))
      ++i;
    std::string tok = s.substr(start, i - start);
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    double v = 0.0;
    const char* b = tok.data();
    const char* e = b + tok.size();
    if (!tok.empty() && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (tok.empty() || ec != std::errc() || p != e) fail("expected a number, got '" + tok + "'");
    return v;
  }
  ConfigValue value() {
    skip_ws();
    if (i >= s.size()) fail("missing value");
    if (s[i] == '"') return string_lit();
    if (s[i] != '[') return number();
    ++i;
    std::vector<double> nums;
    std::vector<std::string> strs;
    for (;;) {
      skip_ws();
      if (i >= s.size()) fail("unterminated array");
      if (s[i] == ']') {
        ++i;
        break;
      }
      if (s[i] == '"')
        strs.push_back(string_lit());
      else
        nums.push_back(number());
      skip_ws();
      if (i < s.size() && s[i] == ',') ++i;
    }
    if (!nums.empty() && !strs.empty()) fail("mixed array");
    if (!strs.empty()) return strs;
    return nums;
  }
};

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

template <class T> const T* get(const std::map<std::string, ConfigValue>& sec, const std::string& key,
                                const std::string& section) {
  auto it = sec.find(key);
  if (it == sec.end()) return nullptr;
  const T* v = std::get_if<T>(&it->second);
  if (!v) throw InputError("[" + section + "] " + key + " has the wrong type");
  return v;
}

}  // namespace

ConfigTable parse_config(const std::string& text) {
  ConfigTable table;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    LineReader r{raw, 0, line};
    if (r.at_end()) continue;
    if (raw[r.i] == '[') {
      std::size_t close = raw.find(']', r.i);
      if (close == std::string::npos) r.fail("unterminated section header");
      section = raw.substr(r.i + 1, close - r.i - 1);
      if (!valid_key(section)) r.fail("bad section name");
      if (table.count(section)) r.fail("duplicate section [" + section + "]");
      table[section];
      r.i = close + 1;
      if (!r.at_end()) r.fail("trailing characters after section header");
      continue;
    }
    std::size_t eq = raw.find('=', r.i);
    if (eq == std::string::npos) r.fail("expected key = value");
    std::string key = raw.substr(r.i, eq - r.i);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    if (!valid_key(key)) r.fail("bad key '" + key + "'");
    if (section.empty()) r.fail("key outside a section");
    r.i = eq + 1;
    ConfigValue v = r.value();
    if (!r.at_end()) r.fail("trailing characters after value");
    if (table[section].count(key)) r.fail("duplicate key " + key);
    table[section][key] = v;
  }
  return table;
}

SystemSpec spec_from_config(const ConfigTable& table, const std::string& name) {
  static const std::map<std::string, std::set<std::string>> allowed = {
      {"system", {"n", "lagrangian", "name"}},
      {"seed", {"point"}},
      {"connection", {"Y"}},
      {"hamiltonian", {"primaries", "energy"}},
      {"run",
       {"tol_rank", "tol_residual", "tol_projection", "tol_subspace", "pivot_rcond", "samples", "sigma", "rng_seed",
        "max_iter", "zero_test_points"}},
  };
  for (const auto& [sec, keys] : table) {
    auto it = allowed.find(sec);
    if (it == allowed.end()) throw InputError("unknown section [" + sec + "]");
    for (const auto& [k, v] : keys) {
      (void)v;
      bool ok = it->second.count(k) > 0;
      if (sec == "seed") ok = ok || k == "t" || (k.size() > 1 && (k[0] == 'q' || k[0] == 'v'));
      if (!ok) throw InputError("unknown key " + k + " in [" + sec + "]");
    }
  }

  SystemSpec spec;
  spec.name = name;
  auto sys = table.find("system");
  if (sys == table.end()) throw InputError("missing [system] section");
  const double* n = get<double>(sys->second, "n", "system");
  const std::string* L = get<std::string>(sys->second, "lagrangian", "system");
  if (!n || !L) throw InputError("[system] needs n and lagrangian");
  if (*n < 1 || *n != std::floor(*n) || *n > 64) throw InputError("[system] n must be a positive integer");
  spec.n = static_cast<int>(*n);
  spec.lagrangian = *L;
  if (const std::string* nm = get<std::string>(sys->second, "name", "system")) spec.name = *nm;

  const int dim = 2 * spec.n + 1;
  spec.seed = VectorXd::Zero(dim);
  if (auto sd = table.find("seed"); sd != table.end()) {
    if (const auto* pt = get<std::vector<double>>(sd->second, "point", "seed")) {
      if (static_cast<int>(pt->size()) != dim)
        throw InputError("[seed] point must have 2n+1 = " + std::to_string(dim) + " entries");
      for (int i = 0; i < dim; ++i) spec.seed[i] = (*pt)[static_cast<std::size_t>(i)];
    }
    SymbolTable names = SymbolTable::lagrangian(spec.n);
    for (const auto& [k, v] : sd->second) {
      if (k == "point") continue;
      int idx = names.index(k);
      if (idx < 0) throw InputError("[seed] unknown coordinate " + k);
      const double* d = std::get_if<double>(&v);
      if (!d) throw InputError("[seed] " + k + " must be a number");
      spec.seed[idx] = *d;
    }
  }
  if (auto c = table.find("connection"); c != table.end()) {
    if (const auto* Y = get<std::vector<std::string>>(c->second, "Y", "connection")) spec.connection = *Y;
    if (!spec.connection.empty() && static_cast<int>(spec.connection.size()) != spec.n)
      throw InputError("[connection] Y needs n components");
  }
  if (auto h = table.find("hamiltonian"); h != table.end()) {
    if (const auto* P = get<std::vector<std::string>>(h->second, "primaries", "hamiltonian")) spec.primaries = *P;
    if (const auto* E = get<std::string>(h->second, "energy", "hamiltonian")) spec.energy = *E;
  }
  if (auto r = table.find("run"); r != table.end()) {
    const auto& s = r->second;
    auto num = [&](const char* key, auto setter) {
      if (const double* v = get<double>(s, key, "run")) setter(*v);
    };
    auto positive = [](const char* key, double v) {
      if (!(v > 0.0)) throw InputError(std::string("[run] ") + key + " must be positive");
      return v;
    };
    RunOptions& o = spec.run;
    num("tol_rank", [&](double v) { o.tol.rank = positive("tol_rank", v); });
    num("tol_residual", [&](double v) { o.tol.residual = positive("tol_residual", v); });
    num("tol_projection", [&](double v) { o.tol.projection = positive("tol_projection", v); });
    num("tol_subspace", [&](double v) { o.tol.subspace = positive("tol_subspace", v); });
    num("pivot_rcond", [&](double v) { o.tol.pivot_rcond = positive("pivot_rcond", v); });
    num("sigma", [&](double v) { o.sample_sigma = positive("sigma", v); });
    num("samples", [&](double v) { o.samples = static_cast<int>(positive("samples", v)); });
    num("zero_test_points", [&](double v) { o.zero_test_points = static_cast<int>(positive("zero_test_points", v)); });
    num("rng_seed", [&](double v) {
      if (v < 0 || v != std::floor(v)) throw InputError("[run] rng_seed must be a non-negative integer");
      o.rng_seed = static_cast<std::uint64_t>(v);
    });
    num("max_iter", [&](double v) { o.max_iter = static_cast<int>(v); });
  }
  return spec;
}

SystemSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return spec_from_config(parse_config(buf.str()), std::filesystem::path(path).stem().string());
}

}  // namespace jetflow
