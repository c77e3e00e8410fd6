#include "smoothsqp/smoothsqp.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

using namespace smoothsqp;

namespace {

Vector parse_point(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--x0 expects comma-separated numbers, got '" + text + "'");
    }
  }
  if (vals.empty()) throw ConfigError("--x0 is empty");
  return Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size()));
}

std::string point_string(const Vector& x) {
  std::string out = "(";
  for (Index i = 0; i < x.size(); ++i) out += (i ? ", " : "") + format_double(x[i]);
  return out + ")";
}

void print_summary(const RunReport& rep) {
  const auto& r = rep.result;
  std::printf("problem: %s\n", rep.problem.c_str());
  std::printf("status: %s (%s)\n", to_string(r.status), r.message.c_str());
  std::printf("iterations: %zu\n", r.trace.size());
  std::printf("final point: %s\n", point_string(r.final_x).c_str());
  std::printf("final merit: %s  (rho %.3g, r %.3g)\n", format_double(rep.final_merit).c_str(), r.final_rho, r.final_r);
  if (rep.upper_objective) std::printf("objective: %s\n", format_double(*rep.upper_objective).c_str());
  std::printf("stationarity residual: %.3e\n", r.stationarity_residual);
  if (rep.distance_to_reference) std::printf("distance to reference: %.3e\n", *rep.distance_to_reference);
  if (!rep.fd.empty()) {
    bool ok = true;
    for (const auto& a : rep.fd) ok = ok && a.passed;
    std::printf("fd check: %s\n", ok ? "pass" : "FAIL");
  }
  if (rep.cq) {
    std::printf("cq: %s over observed trajectory", rep.cq->any_verdict ? (rep.cq->all_hold ? "all hold" : "some fail")
                                                                       : "inconclusive");
    if (rep.cq->bilevel_wnnamcq) std::printf("; bilevel independence %s", *rep.cq->bilevel_wnnamcq ? "holds" : "fails");
    std::printf("\n");
  }
  for (const auto& w : rep.warnings) std::printf("warning: %s\n", w.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smoothing SQP solver for nonsmooth constrained and bilevel programs"};
  app.require_subcommand(1);

  std::string problem, config_path, x0_text, trace_path, report_path, plot_path;
  bool check_cq = false, fd_check = false;
  auto* solve = app.add_subcommand("solve", "Solve a registry problem");
  solve->add_option("problem", problem, "Registry name")->required();
  solve->add_option("--config", config_path, "JSON run configuration (\"spec\": 1)");
  solve->add_option("--x0", x0_text, "Initial point, comma separated");
  solve->add_option("--out-trace", trace_path, "Per-iteration trace CSV");
  solve->add_option("--out-report", report_path, "Run report JSON");
  solve->add_flag("--check-cq", check_cq, "Constraint-qualification verdicts over the trajectory");
  solve->add_flag("--fd-check", fd_check, "Finite-difference audit of all gradients at x0");
  auto* plot_opt = solve->add_option("--emit-plot-data", plot_path, "Write (k, merit, d_norm, rho) TSV [default <problem>.plot.tsv]")
                       ->expected(0, 1);

  auto* list = app.add_subcommand("list", "List registry problems");

  std::string audit_problem;
  auto* audit_cmd = app.add_subcommand("audit", "Run self-checks without solving");
  audit_cmd->add_option("problem", audit_problem, "Registry name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigErrorExit;
  }

  try {
    if (*list) {
      for (const auto& name : registry_names()) {
        const auto e = registry_lookup(name);
        std::printf("%-14s %s\n", name.c_str(), e.description.c_str());
      }
      return 0;
    }
    if (*audit_cmd) {
      const auto rep = audit(audit_problem, env_seed());
      std::printf("%s\n", rep.checks.dump(2).c_str());
      std::printf("audit: %s\n", rep.passed ? "pass" : "FAIL");
      return rep.passed ? 0 : 1;
    }

    RunConfig cfg = default_run_config(problem);
    if (!config_path.empty()) apply_config_json(cfg, load_config_file(config_path));
    if (!x0_text.empty()) cfg.x0 = parse_point(x0_text);
    if (!trace_path.empty()) cfg.trace_path = trace_path;
    if (!report_path.empty()) cfg.report_path = report_path;
    if (plot_opt->count() > 0) cfg.plot_path = plot_path.empty() ? problem + ".plot.tsv" : plot_path;
    if (check_cq) cfg.checks.cq_check = true;
    if (fd_check) cfg.checks.fd_check = true;

    const RunReport rep = run(cfg);
    print_summary(rep);
    return rep.exit_code;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigErrorExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
