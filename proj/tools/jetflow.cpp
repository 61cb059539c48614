#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "jetflow/pipeline.hpp"

using namespace jetflow;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

int cmd_analyze(const std::string& file, const std::string& out_path, bool json) {
  Analysis a = run_analysis(load_spec(file));
  std::string doc = analysis_report(a).dump(2) + "\n";
  if (!out_path.empty()) write_file(out_path, doc);
  if (json)
    std::cout << doc;
  else
    std::cout << analysis_summary(a);
  return a.exit_code;
}

int cmd_bracket(const std::string& file, const std::string& F, const std::string& G, bool json) {
  Analysis a = run_analysis(load_spec(file));
  std::vector<BracketSample> rows = bracket_samples(a, F, G);
  if (json) {
    Json arr = Json::array();
    for (const auto& r : rows) {
      Json pt = Json::array();
      for (Eigen::Index i = 0; i < r.point.size(); ++i) pt.push_back(r.point[i]);
      arr.push_back({{"point", pt}, {"bracket", r.poisson}, {"dirac", r.dirac}});
    }
    std::cout << Json{{"f", F}, {"g", G}, {"samples", arr}}.dump(2) << "\n";
    return a.exit_code;
  }
  std::printf("%-4s %-48s %22s %22s\n", "#", "point (t, q, p)", "{F,G}", "{F,G}_D");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::string pt;
    char buf[32];
    for (Eigen::Index i = 0; i < rows[k].point.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.5g", i ? " " : "", rows[k].point[i]);
      pt += buf;
    }
    std::printf("%-4zu %-48s %22.15g %22.15g\n", k, pt.c_str(), rows[k].poisson, rows[k].dirac);
  }
  return a.exit_code;
}

int cmd_integrate(const std::string& file, double horizon, double step, const std::string& out_path) {
  Analysis a = run_analysis(load_spec(file));
  Trajectory tr = integrate(a, horizon, step);
  std::string csv = to_csv(tr);
  if (out_path.empty())
    std::cout << csv;
  else
    write_file(out_path, csv);
  std::cerr << "integrated the " << tr.field << " field, " << tr.rows.size() << " rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constraint algorithms for time-dependent singular Lagrangians"};
  app.require_subcommand(1);

  std::string file, out_path, F, G;
  bool json = false;
  double horizon = 1.0, step = 1e-3;

  auto* analyze = app.add_subcommand("analyze", "run all towers and write a report");
  analyze->add_option("file", file, "system file")->required();
  analyze->add_option("--out", out_path, "write the JSON report here");
  analyze->add_flag("--json", json, "print the JSON report instead of a summary");

  auto* bracket = app.add_subcommand("bracket", "evaluate {F,G} and the Dirac bracket on final samples");
  bracket->add_option("file", file, "system file")->required();
  bracket->add_option("--f", F, "expression over t, q, p")->required();
  bracket->add_option("--g", G, "expression over t, q, p")->required();
  bracket->add_flag("--json", json, "JSON output");

  auto* integ = app.add_subcommand("integrate", "RK4 trajectory of the final dynamics");
  integ->add_option("file", file, "system file")->required();
  integ->add_option("--horizon", horizon, "time horizon")->required();
  integ->add_option("--step", step, "step size")->required();
  integ->add_option("--out", out_path, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*analyze) return cmd_analyze(file, out_path, json);
    if (*bracket) return cmd_bracket(file, F, G, json);
    return cmd_integrate(file, horizon, step, out_path);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const AssumptionFailure& e) {
    std::cerr << "assumption failure: " << e.what() << "\n";
    return 3;
  } catch (const JetflowError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
