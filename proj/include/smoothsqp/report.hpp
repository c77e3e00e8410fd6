#pragma once

// Run configuration (JSON, "spec": 1), the run driver, and its outputs:
// report JSON, trace CSV and plot TSV.

#include "smoothsqp/bilevel.hpp"
#include "smoothsqp/cq.hpp"
#include "smoothsqp/registry.hpp"
#include "smoothsqp/sqp.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace smoothsqp {

using json = nlohmann::json;

inline constexpr std::uint64_t kDefaultSeed = 20240611;

/// SMOOTHSQP_SEED overrides the fallback.
inline std::uint64_t env_seed(std::uint64_t fallback = kDefaultSeed) {
  if (const char* env = std::getenv("SMOOTHSQP_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
    }
  }
  return fallback;
}

struct RunChecks {
  bool fd_check = false;
  bool cq_check = false;
  bool interiority_check = false;
};

struct RunConfig {
  std::string problem;
  Vector x0;
  SolverConfig solver;
  QuadratureConfig quadrature;
  std::string trace_path;
  std::string report_path;
  std::string plot_path;
  RunChecks checks;
};

/// Registry defaults for `problem`; throws ConfigError for unknown names.
inline RunConfig default_run_config(const std::string& problem) {
  const RegistryEntry e = registry_lookup(problem);
  RunConfig cfg;
  cfg.problem = problem;
  cfg.x0 = e.x0;
  cfg.solver = e.defaults;
  cfg.quadrature = e.quadrature;
  cfg.checks.interiority_check = e.bilevel.has_value();
  return cfg;
}

namespace detail {

template <class T>
T config_value(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config entry '" + where + "." + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config entry '" + where + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config entry '" + where + "." + it.key() + "'");
  }
}

inline Vector json_vector(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ConfigError("config entry '" + where + "' must be an array of numbers");
  Vector v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ConfigError("config entry '" + where + "' must be an array of numbers");
    v[static_cast<Index>(i)] = arr[i].get<double>();
  }
  return v;
}

inline json json_array(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace detail

/// Applies a parsed config document on top of `cfg` (registry defaults).
inline void apply_config_json(RunConfig& cfg, const json& doc) {
  using detail::config_value;
  detail::reject_unknown(doc, {"spec", "problem", "x0", "solver", "quadrature", "outputs", "checks"}, "config");
  if (!doc.contains("spec")) throw ConfigError("config is missing the schema key \"spec\"");
  if (!doc["spec"].is_number_integer() || doc["spec"].get<int>() != 1)
    throw ConfigError("unsupported config schema version (expected \"spec\": 1)");
  if (doc.contains("problem") && config_value<std::string>(doc, "problem", "config") != cfg.problem)
    throw ConfigError("config names problem '" + doc["problem"].get<std::string>() + "' but '" + cfg.problem +
                      "' was requested");
  if (doc.contains("x0")) cfg.x0 = detail::json_vector(doc["x0"], "x0");
  if (doc.contains("solver")) {
    const json& s = doc["solver"];
    detail::reject_unknown(s,
                           {"beta", "sigma1", "sigma2", "sigma", "sigma_prime", "eta_hat", "rho0", "r0", "eps",
                            "eps_prime", "eps1", "w_norm_min", "w_norm_max", "max_iter", "max_backtracks", "qp_tol",
                            "bfgs_sign"},
                           "solver");
    SolverConfig& c = cfg.solver;
    auto num = [&](const char* key, double& field) {
      if (s.contains(key)) field = config_value<double>(s, key, "solver");
    };
    auto integer = [&](const char* key, int& field) {
      if (!s.contains(key)) return;
      if (!s[key].is_number_integer()) throw ConfigError(std::string("config entry 'solver.") + key + "' must be an integer");
      field = s[key].get<int>();
    };
    num("beta", c.beta);
    num("sigma1", c.sigma1);
    num("sigma2", c.sigma2);
    num("sigma", c.sigma);
    num("sigma_prime", c.sigma_prime);
    num("eta_hat", c.eta_hat);
    num("rho0", c.rho0);
    num("r0", c.r0);
    num("eps", c.eps);
    num("eps_prime", c.eps_prime);
    num("eps1", c.eps1);
    num("w_norm_min", c.w_norm_min);
    num("w_norm_max", c.w_norm_max);
    num("qp_tol", c.qp_tol);
    integer("max_iter", c.max_iter);
    integer("max_backtracks", c.max_backtracks);
    if (s.contains("bfgs_sign")) {
      const auto sign = config_value<std::string>(s, "bfgs_sign", "solver");
      if (sign == "add")
        c.bfgs_sign = MultiplierSign::add;
      else if (sign == "subtract")
        c.bfgs_sign = MultiplierSign::subtract;
      else
        throw ConfigError("solver.bfgs_sign must be \"add\" or \"subtract\"");
    }
  }
  if (doc.contains("quadrature")) {
    const json& q = doc["quadrature"];
    detail::reject_unknown(q, {"base_nodes_per_dim", "refinement", "quad_tol"}, "quadrature");
    if (q.contains("base_nodes_per_dim")) cfg.quadrature.base_nodes_per_dim = config_value<int>(q, "base_nodes_per_dim", "quadrature");
    if (q.contains("refinement")) cfg.quadrature.refinement = config_value<int>(q, "refinement", "quadrature");
    if (q.contains("quad_tol")) cfg.quadrature.quad_tol = config_value<double>(q, "quad_tol", "quadrature");
  }
  if (doc.contains("outputs")) {
    const json& o = doc["outputs"];
    detail::reject_unknown(o, {"trace", "report", "plot"}, "outputs");
    if (o.contains("trace")) cfg.trace_path = config_value<std::string>(o, "trace", "outputs");
    if (o.contains("report")) cfg.report_path = config_value<std::string>(o, "report", "outputs");
    if (o.contains("plot")) cfg.plot_path = config_value<std::string>(o, "plot", "outputs");
  }
  if (doc.contains("checks")) {
    const json& c = doc["checks"];
    detail::reject_unknown(c, {"fd_check", "cq_check", "interiority_check"}, "checks");
    if (c.contains("fd_check")) cfg.checks.fd_check = config_value<bool>(c, "fd_check", "checks");
    if (c.contains("cq_check")) cfg.checks.cq_check = config_value<bool>(c, "cq_check", "checks");
    if (c.contains("interiority_check")) cfg.checks.interiority_check = config_value<bool>(c, "interiority_check", "checks");
  }
}

inline json parse_config_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Throws ConfigError when the configuration cannot be run.
inline void validate_run_config(const RunConfig& cfg, const RegistryEntry& entry) {
  if (cfg.x0.size() != entry.problem.n)
    throw ConfigError("x0 has dimension " + std::to_string(cfg.x0.size()) + ", problem '" + cfg.problem + "' has " +
                      std::to_string(entry.problem.n));
  if (!cfg.x0.allFinite()) throw ConfigError("x0 is not finite");
  try {
    cfg.solver.validate();
    cfg.quadrature.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

inline json solver_config_json(const SolverConfig& c) {
  return {{"beta", c.beta},
          {"sigma1", c.sigma1},
          {"sigma2", c.sigma2},
          {"sigma", c.sigma},
          {"sigma_prime", c.sigma_prime},
          {"eta_hat", c.eta_hat},
          {"rho0", c.rho0},
          {"r0", c.r0},
          {"eps", c.eps},
          {"eps_prime", c.eps_prime},
          {"eps1", c.eps1},
          {"w_norm_min", c.w_norm_min},
          {"w_norm_max", c.w_norm_max},
          {"max_iter", c.max_iter},
          {"max_backtracks", c.max_backtracks},
          {"qp_tol", c.qp_tol},
          {"bfgs_sign", c.bfgs_sign == MultiplierSign::add ? "add" : "subtract"}};
}

inline json run_config_json(const RunConfig& cfg) {
  return {{"spec", 1},
          {"problem", cfg.problem},
          {"x0", detail::json_array(cfg.x0)},
          {"solver", solver_config_json(cfg.solver)},
          {"quadrature",
           {{"base_nodes_per_dim", cfg.quadrature.base_nodes_per_dim},
            {"refinement", cfg.quadrature.refinement},
            {"quad_tol", cfg.quadrature.quad_tol}}},
          {"checks",
           {{"fd_check", cfg.checks.fd_check},
            {"cq_check", cfg.checks.cq_check},
            {"interiority_check", cfg.checks.interiority_check}}}};
}

/// 0 converged, 2 max_iter, 3 line-search failure, 4 QP failure,
/// 1 evaluation failure (5 is reserved for configuration errors).
inline int exit_code(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return 0;
    case SolveStatus::max_iter: return 2;
    case SolveStatus::line_search_failure: return 3;
    case SolveStatus::qp_failure: return 4;
    case SolveStatus::evaluation_failure: return 1;
  }
  return 1;
}
inline constexpr int kConfigErrorExit = 5;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Columns: k, x[0..n-1], rho, r, xi, alpha, d_norm, merit, stationarity_residual, rho_updated.
/// merit is theta_{rho_k, r_k}(x_k).
inline std::string trace_csv(const std::vector<IterationRecord>& trace, Index n) {
  std::string out = "k";
  for (Index i = 0; i < n; ++i) out += ",x[" + std::to_string(i) + "]";
  out += ",rho,r,xi,alpha,d_norm,merit,stationarity_residual,rho_updated\n";
  for (const auto& rec : trace) {
    out += std::to_string(rec.k);
    for (Index i = 0; i < n; ++i) out += "," + format_double(rec.x[i]);
    for (double v : {rec.rho, rec.r, rec.xi, rec.alpha, rec.d_norm, rec.merit_before, rec.stationarity_residual})
      out += "," + format_double(v);
    out += rec.rho_updated ? ",1\n" : ",0\n";
  }
  return out;
}

/// Per-iteration (k, merit, d_norm, rho), tab separated.
inline std::string plot_tsv(const std::vector<IterationRecord>& trace) {
  std::string out = "k\tmerit\td_norm\trho\n";
  for (const auto& rec : trace)
    out += std::to_string(rec.k) + "\t" + format_double(rec.merit_before) + "\t" + format_double(rec.d_norm) + "\t" +
           format_double(rec.rho) + "\n";
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline json verdict_json(const CqVerdict& v) {
  json j = {{"kind", to_string(v.kind)}, {"holds", v.holds}, {"evidence", v.evidence}};
  if (v.certificate.size() > 0) j["certificate"] = detail::json_array(v.certificate);
  return j;
}

struct FdAudit {
  std::string family;
  Vector x;
  double rho = 0.0;
  double step = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

inline constexpr double kFdTolerance = 1e-4;

/// Central-difference audit of every family at x; the step stays below the
/// smoothing scale 1/rho.
inline std::vector<FdAudit> fd_audit(const ProblemInstance& prob, const Vector& x, double rho) {
  std::vector<FdAudit> out;
  const double step = std::min(1e-6, 1e-3 / rho);
  auto one = [&](const SmoothedFunction& fn) {
    const auto rep = fd_gradient_check(fn, x, rho, step);
    out.push_back({fn.name, x, rho, step, rep.max_abs_error, rep.passes(kFdTolerance)});
  };
  one(prob.objective);
  for (const auto& g : prob.inequalities) one(g);
  for (const auto& h : prob.equalities) one(h);
  return out;
}

inline json fd_json(const FdAudit& a) {
  return {{"family", a.family},
          {"x", detail::json_array(a.x)},
          {"rho", a.rho},
          {"step", a.step},
          {"max_abs_error", a.max_abs_error},
          {"passed", a.passed}};
}

struct CqReport {
  std::vector<GradientCluster> clusters;
  json verdicts = json::array();
  std::optional<bool> bilevel_wnnamcq;
  bool all_hold = true;
  bool any_verdict = false;
};

/// CQ verdicts over the run's clusters (and the two-vector test for bilevel
/// entries with one lower-level variable).
inline CqReport cq_report(const SolveResult& res, const ProblemInstance& prob, bool bilevel) {
  CqReport rep;
  rep.clusters = collect_clusters(res, prob);
  for (std::size_t ci = 0; ci < rep.clusters.size(); ++ci) {
    const auto& c = rep.clusters[ci];
    json cj = {{"anchor", detail::json_array(c.anchor)},
               {"members", c.members.size()},
               {"settled", c.settled},
               {"settle_gap", c.settle_gap},
               {"verdicts", json::array()}};
    using Check = CqVerdict (*)(const GradientCluster&, const CqOptions&);
    for (Check check : {Check(&check_wnnamcq), Check(&check_ewnnamcq), Check(&check_ewgmfcq)}) {
      try {
        const CqVerdict v = check(c, CqOptions{});
        cj["verdicts"].push_back(verdict_json(v));
        rep.all_hold = rep.all_hold && v.holds;
        rep.any_verdict = true;
      } catch (const InconclusiveError& e) {
        cj["verdicts"].push_back({{"inconclusive", e.what()}});
      }
    }
    rep.verdicts.push_back(std::move(cj));
  }
  if (bilevel && !res.trace.empty() && prob.num_ineq() == 1 && prob.num_eq() == 1) {
    const auto& last = res.trace.back();
    rep.bilevel_wnnamcq = check_bilevel_wnnamcq(last.grad_ineq[0], last.grad_eq[0]);
  }
  return rep;
}

struct RunReport {
  std::string problem;
  SolveResult result;
  int exit_code = 0;
  double final_merit = 0.0;
  std::optional<double> upper_objective;
  std::optional<Vector> reference_solution;
  std::optional<double> distance_to_reference;
  std::optional<double> reference_objective;
  double wall_time = 0.0;
  std::vector<FdAudit> fd;
  std::optional<CqReport> cq;
  std::optional<double> interiority_margin;
  std::vector<std::string> warnings;
  json config;

  json to_json() const {
    json j = {{"spec", 1},
              {"problem", problem},
              {"status", to_string(result.status)},
              {"message", result.message},
              {"exit_code", exit_code},
              {"iterations", result.trace.size()},
              {"final_point", detail::json_array(result.final_x)},
              {"final_merit", final_merit},
              {"final_rho", result.final_rho},
              {"final_r", result.final_r},
              {"stationarity_residual", result.stationarity_residual},
              {"wall_time_s", wall_time},
              {"warnings", warnings},
              {"config", config}};
    if (upper_objective) j["objective"] = *upper_objective;
    if (reference_solution) {
      j["reference_solution"] = detail::json_array(*reference_solution);
      j["distance_to_reference"] = *distance_to_reference;
    }
    if (reference_objective) j["reference_objective"] = *reference_objective;
    if (!fd.empty()) {
      j["fd_check"] = json::array();
      for (const auto& a : fd) j["fd_check"].push_back(fd_json(a));
    }
    if (cq) {
      j["cq"] = {{"clusters", cq->verdicts}, {"scope", "verdict over observed trajectory"}};
      if (cq->bilevel_wnnamcq) j["cq"]["bilevel_wnnamcq"] = *cq->bilevel_wnnamcq;
    }
    if (interiority_margin) j["interiority_margin"] = *interiority_margin;
    return j;
  }
};

/// Builds the problem, solves it, runs the requested checks and writes the
/// configured output files.
inline RunReport run(const RunConfig& cfg) {
  RegistryEntry entry = registry_lookup(cfg.problem);
  validate_run_config(cfg, entry);
  entry.quadrature = cfg.quadrature;
  entry.rebuild();

  RunReport rep;
  rep.problem = cfg.problem;
  rep.config = run_config_json(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  if (cfg.checks.fd_check) {
    try {
      rep.fd = fd_audit(entry.problem, cfg.x0, cfg.solver.rho0);
    } catch (const Error& e) {
      rep.warnings.push_back(std::string("fd check failed to evaluate: ") + e.what());
    }
    for (const auto& a : rep.fd)
      if (!a.passed) rep.warnings.push_back("gradient of '" + a.family + "' disagrees with finite differences");
  }

  rep.result = run_solver(entry.problem, cfg.x0, cfg.solver);
  rep.exit_code = exit_code(rep.result.status);
  const Vector& xf = rep.result.final_x;
  rep.final_merit = rep.result.trace.empty()
                        ? merit_value(entry.problem, xf, {cfg.solver.rho0, cfg.solver.r0})
                        : rep.result.final_merit;

  if (entry.bilevel) {
    const Index n = entry.bilevel->n;
    rep.upper_objective = entry.bilevel->F(xf.head(n), xf.tail(entry.bilevel->m));
  } else {
    rep.upper_objective = entry.problem.objective.value_at(xf, rep.result.final_rho);
  }
  if (entry.reference_solution) {
    rep.reference_solution = entry.reference_solution;
    rep.distance_to_reference = (xf - *entry.reference_solution).norm();
  }
  rep.reference_objective = entry.reference_objective;

  if (cfg.checks.cq_check) {
    try {
      rep.cq = cq_report(rep.result, entry.problem, entry.bilevel.has_value());
    } catch (const Error& e) {
      rep.warnings.push_back(std::string("CQ check failed: ") + e.what());
    }
  }
  if (cfg.checks.interiority_check && entry.bilevel) {
    const Index n = entry.bilevel->n;
    rep.interiority_margin = interiority_margin(*entry.bilevel, xf.head(n));
    if (*rep.interiority_margin < 1e-3)
      rep.warnings.push_back("lower-level minimiser lies on the boundary of Y at the final point");
  }
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.trace_path.empty()) write_text_file(cfg.trace_path, trace_csv(rep.result.trace, entry.problem.n));
  if (!cfg.plot_path.empty()) write_text_file(cfg.plot_path, plot_tsv(rep.result.trace));
  if (!cfg.report_path.empty()) write_text_file(cfg.report_path, rep.to_json().dump(2) + "\n");
  return rep;
}

struct AuditReport {
  json checks = json::array();
  bool passed = true;
};

/// Self-checks without solving: gradient audits at x0 and seeded points
/// around it, plus (bilevel) interiority and the two-vector independence
/// test at the reference solution.
inline AuditReport audit(const std::string& problem, std::uint64_t seed) {
  const RegistryEntry entry = registry_lookup(problem);
  AuditReport rep;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::vector<Vector> points = {entry.x0};
  for (int i = 0; i < 3; ++i) {
    Vector p = entry.x0;
    for (Index j = 0; j < p.size(); ++j) p[j] += jitter(gen);
    points.push_back(p);
  }
  const double rho0 = entry.defaults.rho0;
  for (const auto& p : points)
    for (double rho : {rho0, 100.0 * rho0, 1e4 * rho0}) {
      for (const auto& a : fd_audit(entry.problem, p, rho)) {
        json j = fd_json(a);
        j["check"] = "fd_gradient";
        rep.checks.push_back(j);
        rep.passed = rep.passed && a.passed;
      }
    }
  if (entry.bilevel && entry.reference_solution) {
    const auto& bp = *entry.bilevel;
    const Vector& z = *entry.reference_solution;
    const double margin = interiority_margin(bp, z.head(bp.n));
    rep.checks.push_back({{"check", "interiority"}, {"x", detail::json_array(z.head(bp.n))}, {"margin", margin},
                          {"passed", margin >= 1e-3}});
    rep.passed = rep.passed && margin >= 1e-3;
    if (bp.m == 1) {
      const double rho = 1e8;
      const Vector gi = entry.problem.inequalities[0].gradient_at(z, rho);
      const Vector ge = entry.problem.equalities[0].gradient_at(z, rho);
      const bool indep = check_bilevel_wnnamcq(gi, ge);
      rep.checks.push_back({{"check", "bilevel_wnnamcq"},
                            {"rho", rho},
                            {"grad_ineq", detail::json_array(gi)},
                            {"grad_eq", detail::json_array(ge)},
                            {"passed", indep}});
      rep.passed = rep.passed && indep;
    }
  }
  return rep;
}

}  // namespace smoothsqp
