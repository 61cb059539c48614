#ifndef JETFLOW_CONFIG_HPP
#define JETFLOW_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "jetflow/constraint_engine.hpp"

namespace jetflow {

// Values of the small TOML subset accepted in system files.
using ConfigValue = std::variant<double, std::string, std::vector<double>, std::vector<std::string>>;
using ConfigTable = std::map<std::string, std::map<std::string, ConfigValue>>;

ConfigTable parse_config(const std::string& text);

struct SystemSpec {
  std::string name;
  int n = 0;
  std::string lagrangian;
  VectorXd seed;
  std::vector<std::string> connection;  // empty: d/dt
  std::vector<std::string> primaries;   // empty: eliminate automatically
  std::string energy;                   // optional override over (t, q, p)
  RunOptions run;
};

SystemSpec spec_from_config(const ConfigTable& table, const std::string& name = "");
SystemSpec load_spec(const std::string& path);

}  // namespace jetflow

#endif
