#pragma once

// Named test problems: the three bilevel examples with their published
// parameters and solutions, plus smooth problems with analytic solutions.

#include "smoothsqp/bilevel.hpp"
#include "smoothsqp/problem.hpp"
#include "smoothsqp/sqp.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace smoothsqp {

struct RegistryEntry {
  std::string name;
  std::string description;
  std::optional<BilevelProblem> bilevel;
  ProblemInstance problem;  ///< the combined program for bilevel entries
  SolverConfig defaults;
  QuadratureConfig quadrature;
  Vector x0;
  std::optional<Vector> reference_solution;
  std::optional<double> reference_objective;

  /// Rebuilds `problem` (needed after changing `quadrature`).
  void rebuild() {
    if (bilevel) problem = build_combined_program(*bilevel, quadrature);
  }
};

namespace problems {

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

/// min (x-2)^2 + (y-1)^2, y in argmin_{[-2,2]} -x exp(-(y+1)^2) - exp(-(y-1)^2).
inline BilevelProblem mirrlees() {
  BilevelProblem bp;
  bp.name = "mirrlees";
  bp.n = 1;
  bp.m = 1;
  bp.F = [](const Vector& x, const Vector& y) {
    return (x[0] - 2.0) * (x[0] - 2.0) + (y[0] - 1.0) * (y[0] - 1.0);
  };
  bp.grad_F = [](const Vector& x, const Vector& y) { return vec({2.0 * (x[0] - 2.0), 2.0 * (y[0] - 1.0)}); };
  bp.f = [](const Vector& x, const Vector& y) {
    const double a = y[0] + 1.0, b = y[0] - 1.0;
    return -x[0] * std::exp(-a * a) - std::exp(-b * b);
  };
  bp.grad_f = [](const Vector& x, const Vector& y) {
    const double a = y[0] + 1.0, b = y[0] - 1.0;
    const double ea = std::exp(-a * a), eb = std::exp(-b * b);
    return vec({-ea, 2.0 * x[0] * a * ea + 2.0 * b * eb});
  };
  bp.grad_grad_y_f = [](const Vector& x, const Vector& y) {
    const double a = y[0] + 1.0, b = y[0] - 1.0;
    const double ea = std::exp(-a * a), eb = std::exp(-b * b);
    Matrix J(1, 2);
    J << 2.0 * a * ea, 2.0 * x[0] * ea * (1.0 - 2.0 * a * a) + 2.0 * eb * (1.0 - 2.0 * b * b);
    return J;
  };
  bp.y_lower = vec({-2.0});
  bp.y_upper = vec({2.0});
  return bp;
}

/// Positive root of (1 + y) = (1 - y) exp(4y), by bisection on (0.5, 1).
inline double mirrlees_y_bar() {
  auto r = [](double y) { return (1.0 + y) - (1.0 - y) * std::exp(4.0 * y); };
  double lo = 0.5, hi = 0.999;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (r(lo) * r(mid) <= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/// min (x-1/4)^2 + y^2, y in argmin_{[-1,1]} y^3/3 - x y.
inline BilevelProblem cubic_linear() {
  BilevelProblem bp;
  bp.name = "ex3_14";
  bp.n = 1;
  bp.m = 1;
  bp.F = [](const Vector& x, const Vector& y) { return (x[0] - 0.25) * (x[0] - 0.25) + y[0] * y[0]; };
  bp.grad_F = [](const Vector& x, const Vector& y) { return vec({2.0 * (x[0] - 0.25), 2.0 * y[0]}); };
  bp.f = [](const Vector& x, const Vector& y) { return y[0] * y[0] * y[0] / 3.0 - x[0] * y[0]; };
  bp.grad_f = [](const Vector& x, const Vector& y) { return vec({-y[0], y[0] * y[0] - x[0]}); };
  bp.grad_grad_y_f = [](const Vector&, const Vector& y) {
    Matrix J(1, 2);
    J << -1.0, 2.0 * y[0];
    return J;
  };
  bp.y_lower = vec({-1.0});
  bp.y_upper = vec({1.0});
  return bp;
}

/// min (x-0.25)^2 + y^2, y in argmin_{[-1,1]} y^3/3 - x^2 y.
inline BilevelProblem cubic_quadratic() {
  BilevelProblem bp;
  bp.name = "ex3_20";
  bp.n = 1;
  bp.m = 1;
  bp.F = [](const Vector& x, const Vector& y) { return (x[0] - 0.25) * (x[0] - 0.25) + y[0] * y[0]; };
  bp.grad_F = [](const Vector& x, const Vector& y) { return vec({2.0 * (x[0] - 0.25), 2.0 * y[0]}); };
  bp.f = [](const Vector& x, const Vector& y) { return y[0] * y[0] * y[0] / 3.0 - x[0] * x[0] * y[0]; };
  bp.grad_f = [](const Vector& x, const Vector& y) {
    return vec({-2.0 * x[0] * y[0], y[0] * y[0] - x[0] * x[0]});
  };
  bp.grad_grad_y_f = [](const Vector& x, const Vector& y) {
    Matrix J(1, 2);
    J << -2.0 * x[0], 2.0 * y[0];
    return J;
  };
  bp.y_lower = vec({-1.0});
  bp.y_upper = vec({1.0});
  return bp;
}

/// min (x - 1)^2 s.t. x <= 0; solution 0.
inline ProblemInstance quad1d() {
  ProblemInstance prob;
  prob.n = 1;
  prob.objective = smooth_function("f", 1, [](const Vector& x) { return (x[0] - 1.0) * (x[0] - 1.0); },
                                   [](const Vector& x) { return vec({2.0 * (x[0] - 1.0)}); });
  prob.inequalities.push_back(
      smooth_function("g", 1, [](const Vector& x) { return x[0]; }, [](const Vector&) { return vec({1.0}); }));
  return prob;
}

/// min (x0 - 1)^2 + 4 (x1 + 0.5)^2, unconstrained.
inline ProblemInstance unconstrained() {
  ProblemInstance prob;
  prob.n = 2;
  prob.objective = smooth_function(
      "f", 2, [](const Vector& x) { return (x[0] - 1.0) * (x[0] - 1.0) + 4.0 * (x[1] + 0.5) * (x[1] + 0.5); },
      [](const Vector& x) { return vec({2.0 * (x[0] - 1.0), 8.0 * (x[1] + 0.5)}); });
  return prob;
}

/// min (x0 - 2)^2 + (x1 - 1)^2 s.t. |x0| + |x1| <= 1, with the absolute
/// values smoothed as sqrt(t^2 + 1/rho). Solution (1, 0).
inline ProblemInstance l1_ball() {
  ProblemInstance prob;
  prob.n = 2;
  prob.objective = smooth_function(
      "f", 2, [](const Vector& x) { return (x[0] - 2.0) * (x[0] - 2.0) + (x[1] - 1.0) * (x[1] - 1.0); },
      [](const Vector& x) { return vec({2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)}); });
  SmoothedFunction g;
  g.name = "|x0| + |x1| - 1";
  g.dimension = 2;
  g.value_at = [](const Vector& x, double rho) {
    const double e = 1.0 / std::sqrt(rho);
    return std::sqrt(x[0] * x[0] + e * e) + std::sqrt(x[1] * x[1] + e * e) - 1.0;
  };
  g.gradient_at = [](const Vector& x, double rho) {
    const double e = 1.0 / std::sqrt(rho);
    return vec({x[0] / std::sqrt(x[0] * x[0] + e * e), x[1] / std::sqrt(x[1] * x[1] + e * e)});
  };
  g.base_value_at = [](const Vector& x) { return std::abs(x[0]) + std::abs(x[1]) - 1.0; };
  prob.inequalities.push_back(std::move(g));
  return prob;
}

/// min x0 + x1 s.t. x0^2 + x1^2 = 2; solution (-1, -1).
inline ProblemInstance circle() {
  ProblemInstance prob;
  prob.n = 2;
  prob.objective = smooth_function("f", 2, [](const Vector& x) { return x[0] + x[1]; },
                                   [](const Vector&) { return vec({1.0, 1.0}); });
  prob.equalities.push_back(smooth_function(
      "h", 2, [](const Vector& x) { return x.squaredNorm() - 2.0; }, [](const Vector& x) { return Vector(2.0 * x); }));
  return prob;
}

}  // namespace problems

inline std::vector<std::string> registry_names() {
  return {"mirrlees", "ex3_14", "ex3_20", "quad1d", "unconstrained", "l1_ball", "circle"};
}

inline RegistryEntry registry_lookup(const std::string& name) {
  using problems::vec;
  RegistryEntry e;
  e.name = name;
  SolverConfig& c = e.defaults;
  if (name == "mirrlees" || name == "ex3_14" || name == "ex3_20") {
    c.sigma1 = c.sigma2 = 1e-6;
    c.rho0 = 100.0;
    c.r0 = 100.0;
    c.sigma = c.sigma_prime = 10.0;
    c.eps_prime = 1e-8;
    if (name == "mirrlees") {
      e.description = "Mirrlees' bilevel problem on Y = [-2, 2]";
      e.bilevel = problems::mirrlees();
      c.beta = 0.8;
      c.eta_hat = 5e5;
      c.eps = 7e-5;
      c.eps1 = 1e-6;
      e.x0 = vec({0.5, 0.3});
      e.reference_solution = vec({1.0, problems::mirrlees_y_bar()});
    } else if (name == "ex3_14") {
      e.description = "bilevel: (x-1/4)^2 + y^2, lower y^3/3 - x y on [-1, 1]";
      e.bilevel = problems::cubic_linear();
      c.beta = 0.9;
      c.eta_hat = 5000.0;
      c.eps = 5e-6;
      c.eps1 = 5e-6;
      e.x0 = vec({0.3, 0.3});
      e.reference_solution = vec({0.25, 0.5});
      e.reference_objective = 0.25;
    } else {
      e.description = "bilevel: (x-0.25)^2 + y^2, lower y^3/3 - x^2 y on [-1, 1]";
      e.bilevel = problems::cubic_quadratic();
      c.beta = 0.9;
      c.eta_hat = 500.0;
      c.eps = 1e-6;
      c.eps1 = 1e-6;
      e.x0 = vec({0.3, 0.3});
      e.reference_solution = vec({0.5, 0.5});
      e.reference_objective = 5.0 / 16.0;
    }
    e.rebuild();
    if (!e.reference_objective) {
      const Vector& z = *e.reference_solution;
      e.reference_objective = e.bilevel->F(z.head(1), z.tail(1));
    }
    return e;
  }
  c.eps1 = 1e-8;
  if (name == "quad1d") {
    e.description = "min (x-1)^2 s.t. x <= 0";
    e.problem = problems::quad1d();
    e.x0 = vec({1.0});
    e.reference_solution = vec({0.0});
    e.reference_objective = 1.0;
  } else if (name == "unconstrained") {
    e.description = "min (x0-1)^2 + 4 (x1+0.5)^2";
    e.problem = problems::unconstrained();
    e.x0 = vec({5.0, 5.0});
    e.reference_solution = vec({1.0, -0.5});
    e.reference_objective = 0.0;
  } else if (name == "l1_ball") {
    e.description = "min (x0-2)^2 + (x1-1)^2 s.t. |x0| + |x1| <= 1 (smoothed abs)";
    e.problem = problems::l1_ball();
    e.x0 = vec({0.2, 0.3});
    e.reference_solution = vec({1.0, 0.0});
    e.reference_objective = 2.0;
  } else if (name == "circle") {
    e.description = "min x0 + x1 s.t. x0^2 + x1^2 = 2";
    e.problem = problems::circle();
    e.x0 = vec({1.0, 0.5});
    e.reference_solution = vec({-1.0, -1.0});
    e.reference_objective = -2.0;
  } else {
    std::string names;
    for (const auto& n : registry_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown problem '" + name + "'; available: " + names);
  }
  return e;
}

}  // namespace smoothsqp
