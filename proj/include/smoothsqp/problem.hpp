#pragma once

// Nonsmooth program with smoothing families, and the exact-penalty merit
// function theta(x) = f_rho(x) + r * max{0, g_i(x), |h_j(x)|}.

#include "smoothsqp/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace smoothsqp {

/// A family {g_rho} of continuously differentiable approximations of one
/// (possibly nonsmooth) function g. Evaluation must be reentrant.
struct SmoothedFunction {
  using ValueFn = std::function<double(const Vector&, double)>;
  using GradientFn = std::function<Vector(const Vector&, double)>;
  using BaseFn = std::function<double(const Vector&)>;

  std::string name;
  Index dimension = 0;
  ValueFn value_at;
  GradientFn gradient_at;
  /// The underlying function g itself, when it can be evaluated (possibly
  /// through a surrogate oracle). Empty otherwise.
  BaseFn base_value_at;

  bool has_base() const { return static_cast<bool>(base_value_at); }
};

/// Wraps an already smooth function: the family is rho-independent and is
/// its own base function.
inline SmoothedFunction smooth_function(std::string name, Index n,
                                        std::function<double(const Vector&)> value,
                                        std::function<Vector(const Vector&)> gradient) {
  SmoothedFunction fn;
  fn.name = std::move(name);
  fn.dimension = n;
  fn.value_at = [value](const Vector& x, double) { return value(x); };
  fn.gradient_at = [gradient](const Vector& x, double) { return gradient(x); };
  fn.base_value_at = value;
  return fn;
}

/// min f(x) s.t. g_i(x) <= 0 (i < p), h_j(x) = 0, all members given as
/// smoothing families over R^n.
struct ProblemInstance {
  Index n = 0;
  SmoothedFunction objective;
  std::vector<SmoothedFunction> inequalities;
  std::vector<SmoothedFunction> equalities;

  Index num_ineq() const { return static_cast<Index>(inequalities.size()); }
  Index num_eq() const { return static_cast<Index>(equalities.size()); }
  bool unconstrained() const { return inequalities.empty() && equalities.empty(); }

  /// Throws DomainError when a member's dimension disagrees with n.
  void validate() const {
    if (n <= 0) throw DomainError("problem dimension must be positive");
    auto check = [this](const SmoothedFunction& fn) {
      if (fn.dimension != n)
        throw DomainError("family '" + fn.name + "' has dimension " + std::to_string(fn.dimension) +
                          ", problem has " + std::to_string(n));
      if (!fn.value_at || !fn.gradient_at)
        throw DomainError("family '" + fn.name + "' is missing value or gradient");
    };
    check(objective);
    for (const auto& g : inequalities) check(g);
    for (const auto& h : equalities) check(h);
  }
};

struct MeritParams {
  double rho = 1.0;
  double r = 1.0;

  void validate() const {
    if (!(rho > 0.0) || !(r > 0.0)) throw DomainError("merit parameters rho and r must be positive");
  }
};

/// Values (and optionally gradients) of every family at one (x, rho).
struct Evaluation {
  double f = 0.0;
  Vector grad_f;
  Vector ineq_values;
  Vector eq_values;
  std::vector<Vector> ineq_grads;
  std::vector<Vector> eq_grads;
};

namespace detail {

inline double checked_value(const SmoothedFunction& fn, const Vector& x, double rho) {
  const double v = fn.value_at(x, rho);
  if (!std::isfinite(v)) throw EvaluationError(fn.name, "non-finite value");
  return v;
}

inline Vector checked_gradient(const SmoothedFunction& fn, const Vector& x, double rho) {
  Vector g = fn.gradient_at(x, rho);
  if (g.size() != x.size()) throw EvaluationError(fn.name, "gradient has wrong size");
  if (!g.allFinite()) throw EvaluationError(fn.name, "non-finite gradient");
  return g;
}

}  // namespace detail

inline Evaluation evaluate(const ProblemInstance& prob, const Vector& x, double rho,
                           bool with_gradients) {
  if (!x.allFinite()) throw DomainError("evaluation point is not finite");
  Evaluation ev;
  ev.f = detail::checked_value(prob.objective, x, rho);
  ev.ineq_values.resize(prob.num_ineq());
  ev.eq_values.resize(prob.num_eq());
  for (Index i = 0; i < prob.num_ineq(); ++i)
    ev.ineq_values[i] = detail::checked_value(prob.inequalities[i], x, rho);
  for (Index j = 0; j < prob.num_eq(); ++j)
    ev.eq_values[j] = detail::checked_value(prob.equalities[j], x, rho);
  if (with_gradients) {
    ev.grad_f = detail::checked_gradient(prob.objective, x, rho);
    for (const auto& g : prob.inequalities) ev.ineq_grads.push_back(detail::checked_gradient(g, x, rho));
    for (const auto& h : prob.equalities) ev.eq_grads.push_back(detail::checked_gradient(h, x, rho));
  }
  return ev;
}

/// phi(x) = max{0, g_i, |h_j|}.
inline double constraint_violation(const Vector& ineq_values, const Vector& eq_values) {
  double phi = 0.0;
  if (ineq_values.size() > 0) phi = std::max(phi, ineq_values.maxCoeff());
  if (eq_values.size() > 0) phi = std::max(phi, eq_values.cwiseAbs().maxCoeff());
  return phi;
}

inline double merit_value(const Evaluation& ev, const MeritParams& mp) {
  if (ev.ineq_values.size() == 0 && ev.eq_values.size() == 0) return ev.f;
  return ev.f + mp.r * constraint_violation(ev.ineq_values, ev.eq_values);
}

inline double merit_value(const ProblemInstance& prob, const Vector& x, const MeritParams& mp) {
  mp.validate();
  return merit_value(evaluate(prob, x, mp.rho, false), mp);
}

/// Classification threshold for the active sets of phi, relative to phi.
inline constexpr double kActiveTolerance = 1e-12;

/// One-sided directional derivative phi'(x; d) from values and gradients at x.
inline double violation_directional_derivative(const Evaluation& ev, const Vector& d,
                                               double act_tol = kActiveTolerance) {
  const double phi = constraint_violation(ev.ineq_values, ev.eq_values);
  const double tol = act_tol * std::max(1.0, phi);
  const Index p = ev.ineq_values.size();
  const Index m = ev.eq_values.size();

  if (phi > tol) {
    double best = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < p; ++i)
      if (ev.ineq_values[i] >= phi - tol) best = std::max(best, ev.ineq_grads[i].dot(d));
    for (Index j = 0; j < m; ++j) {
      if (ev.eq_values[j] >= phi - tol) best = std::max(best, ev.eq_grads[j].dot(d));
      if (-ev.eq_values[j] >= phi - tol) best = std::max(best, -ev.eq_grads[j].dot(d));
    }
    return best;
  }

  // phi == 0: the constant 0 always participates in the max.
  double best = 0.0;
  for (Index i = 0; i < p; ++i)
    if (ev.ineq_values[i] >= -tol) best = std::max(best, ev.ineq_grads[i].dot(d));
  for (Index j = 0; j < m; ++j)
    if (std::abs(ev.eq_values[j]) <= tol) best = std::max(best, std::abs(ev.eq_grads[j].dot(d)));
  return best;
}

inline double merit_directional_derivative(const Evaluation& ev, const Vector& d,
                                           const MeritParams& mp,
                                           double act_tol = kActiveTolerance) {
  double deriv = ev.grad_f.dot(d);
  if (ev.ineq_values.size() > 0 || ev.eq_values.size() > 0)
    deriv += mp.r * violation_directional_derivative(ev, d, act_tol);
  return deriv;
}

inline double merit_directional_derivative(const ProblemInstance& prob, const Vector& x,
                                           const Vector& d, const MeritParams& mp,
                                           double act_tol = kActiveTolerance) {
  mp.validate();
  if (!d.allFinite()) throw DomainError("direction is not finite");
  return merit_directional_derivative(evaluate(prob, x, mp.rho, true), d, mp, act_tol);
}

struct FdCheckReport {
  double max_abs_error = 0.0;
  Vector per_coordinate;  ///< |analytic_i - fd_i|
  Vector analytic;
  Vector finite_difference;

  /// max_abs_error <= tol * max(1, ||analytic||)
  bool passes(double tol) const { return max_abs_error <= tol * std::max(1.0, analytic.norm()); }
};

/// Central-difference audit of gradient_at against value_at at fixed rho.
inline FdCheckReport fd_gradient_check(const SmoothedFunction& fn, const Vector& x, double rho,
                                       double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
  FdCheckReport rep;
  rep.analytic = fn.gradient_at(x, rho);
  rep.finite_difference.resize(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double up = fn.value_at(xp, rho);
    xp[i] = x[i] - step;
    const double down = fn.value_at(xp, rho);
    xp[i] = x[i];
    rep.finite_difference[i] = (up - down) / (2.0 * step);
  }
  rep.per_coordinate = (rep.analytic - rep.finite_difference).cwiseAbs();
  rep.max_abs_error = rep.per_coordinate.size() > 0 ? rep.per_coordinate.maxCoeff() : 0.0;
  return rep;
}

/// Samples |g_{rho_k}(z_k) - g(x)| along z_k = x + offset / 2^k, rho_k = rho0 * growth^k.
/// Requires a base function. The errors should tend to zero.
inline std::vector<double> smoothing_convergence_samples(const SmoothedFunction& fn, const Vector& x,
                                                         const Vector& offset, double rho0,
                                                         double growth, int steps) {
  if (!fn.has_base()) throw DomainError("family '" + fn.name + "' has no base function");
  const double target = fn.base_value_at(x);
  std::vector<double> errors;
  double rho = rho0;
  double scale = 1.0;
  for (int k = 0; k < steps; ++k) {
    errors.push_back(std::abs(fn.value_at(x + scale * offset, rho) - target));
    rho *= growth;
    scale *= 0.5;
  }
  return errors;
}

}  // namespace smoothsqp
