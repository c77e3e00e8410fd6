#pragma once

// Smoothing SQP outer loop: penalized QP step, penalty update, Armijo
// backtracking on the merit function, smoothing-parameter schedule and a
// Powell-damped BFGS update with reset.

#include "smoothsqp/core.hpp"
#include "smoothsqp/problem.hpp"
#include "smoothsqp/qp.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace smoothsqp {

/// Sign applied to the multiplier terms of y_k in the BFGS update.
enum class MultiplierSign {
  subtract,  ///< y = grad f(x+) - grad f(x) - sum lam (grad c(x+) - grad c(x))
  add,       ///< gradient difference of the Lagrangian f + sum lam c
};

struct SolverConfig {
  double beta = 0.8;
  double sigma1 = 1e-6;
  double sigma2 = 1e-6;  // kept for completeness; the iteration never reads it
  double sigma = 10.0;
  double sigma_prime = 10.0;
  double eta_hat = 5e5;
  double rho0 = 100.0;
  double r0 = 100.0;
  double eps = 7e-5;
  double eps_prime = 1e-8;
  double eps1 = 1e-6;
  double w_norm_min = 1e-5;
  double w_norm_max = 1e5;
  int max_iter = 100;
  int max_backtracks = 60;
  double qp_tol = 1e-10;
  MultiplierSign bfgs_sign = MultiplierSign::add;

  void validate() const {
    auto in_open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_open_unit(beta)) throw DomainError("beta must lie in (0, 1)");
    if (!in_open_unit(sigma1) || !in_open_unit(sigma2) || sigma1 > sigma2)
      throw DomainError("sigma1 <= sigma2 must lie in (0, 1)");
    if (!(sigma > 1.0) || !(sigma_prime > 1.0) || !(eta_hat > 1.0))
      throw DomainError("sigma, sigma' and eta_hat must exceed 1");
    if (!(rho0 > 0.0) || !(r0 > 0.0)) throw DomainError("rho0 and r0 must be positive");
    if (!(eps > 0.0) || !(eps_prime > 0.0) || !(eps1 > 0.0)) throw DomainError("tolerances must be positive");
    if (!(w_norm_min > 0.0) || !(w_norm_max > w_norm_min)) throw DomainError("invalid W norm bounds");
    if (max_iter < 1 || max_backtracks < 1) throw DomainError("iteration caps must be positive");
    if (!(qp_tol > 0.0)) throw DomainError("qp_tol must be positive");
  }
};

struct IterationRecord {
  int k = 0;
  Vector x;
  double rho = 0.0;
  double r = 0.0;       ///< penalty used by the QP and line search at this iteration
  double r_next = 0.0;
  Vector d;
  double xi = 0.0;
  double alpha = 0.0;
  int backtracks = 0;
  QpSolution multipliers;
  double merit_before = 0.0;
  double merit_after = 0.0;
  double d_norm = 0.0;
  double dWd = 0.0;
  double directional_derivative = 0.0;
  bool rho_updated = false;
  bool r_updated = false;
  bool w_reset = false;  ///< the BFGS update that produced the next W was reset to I
  Matrix W;              ///< matrix used at this iteration
  Vector grad_f;
  std::vector<Vector> grad_ineq;
  std::vector<Vector> grad_eq;
  Vector ineq_values;
  Vector eq_values;
  double stationarity_residual = 0.0;
};

enum class SolveStatus { converged, max_iter, line_search_failure, qp_failure, evaluation_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::line_search_failure: return "line_search_failure";
    case SolveStatus::qp_failure: return "qp_failure";
    case SolveStatus::evaluation_failure: return "evaluation_failure";
  }
  return "unknown";
}

struct SolveResult {
  SolveStatus status = SolveStatus::max_iter;
  Vector final_x;
  double final_rho = 0.0;
  double final_r = 0.0;
  double final_merit = 0.0;  ///< theta at final_x with the last iteration's (rho, r)
  std::vector<IterationRecord> trace;
  double stationarity_residual = 0.0;
  std::vector<int> d_small_set;
  std::string message;
};

class LineSearchFailure : public Error {
 public:
  LineSearchFailure(int backtracks, double last_decrease, double required)
      : Error("line search failed after " + std::to_string(backtracks) + " backtracks (decrease " +
              std::to_string(last_decrease) + ", required " + std::to_string(required) + ")"),
        backtracks_(backtracks),
        last_decrease_(last_decrease),
        required_(required) {}
  int backtracks() const noexcept { return backtracks_; }
  double last_decrease() const noexcept { return last_decrease_; }
  double required() const noexcept { return required_; }
  /// actual change over the Armijo bound at the last trial step
  double ratio() const noexcept { return required_ != 0.0 ? last_decrease_ / required_ : last_decrease_; }

 private:
  int backtracks_;
  double last_decrease_;
  double required_;
};

struct LineSearchResult {
  double alpha = 1.0;
  double merit_before = 0.0;
  double merit_after = 0.0;
  int backtracks = 0;
};

/// alpha = beta^l for the smallest l with
/// theta(x + alpha d) - theta(x) <= -sigma1 alpha d'Wd.
/// The comparison allows a roundoff slack of a few ulps of theta(x), capped
/// at 1e-12, so steps at the noise floor are not rejected.
inline LineSearchResult line_search(const ProblemInstance& prob, const Vector& x, const Vector& d,
                                    const Matrix& W, const MeritParams& mp, double beta, double sigma1,
                                    int max_backtracks) {
  if (max_backtracks < 1) throw DomainError("max_backtracks must be at least 1");
  LineSearchResult res;
  res.merit_before = merit_value(prob, x, mp);
  const double dWd = d.dot(W * d);
  const double slack = std::min(1e-12, 16.0 * std::numeric_limits<double>::epsilon() *
                                           std::max(1.0, std::abs(res.merit_before)));
  double alpha = 1.0;
  double change = 0.0, required = 0.0;
  for (int l = 0; l <= max_backtracks; ++l) {
    const double trial = merit_value(prob, x + alpha * d, mp);
    change = trial - res.merit_before;
    required = -sigma1 * alpha * dWd;
    if (change <= required + slack) {
      res.alpha = alpha;
      res.merit_after = trial;
      res.backtracks = l;
      return res;
    }
    alpha *= beta;
  }
  throw LineSearchFailure(max_backtracks, change, required);
}

/// Keeps r while xi is numerically zero, otherwise multiplies by sigma'.
inline double update_penalty(double r, double xi, double sigma_prime, double eps_prime) {
  if (!(r > 0.0)) throw DomainError("penalty must be positive");
  return xi < eps_prime ? r : sigma_prime * r;
}

struct SmoothingUpdate {
  double rho = 0.0;
  bool updated = false;
};

/// Increases rho by sigma when ||d|| <= max(eta_hat / rho, eps).
inline SmoothingUpdate update_smoothing(double rho, double d_norm, double sigma, double eta_hat, double eps) {
  if (!(rho > 0.0)) throw DomainError("smoothing parameter must be positive");
  if (d_norm <= std::max(eta_hat / rho, eps)) return {sigma * rho, true};
  return {rho, false};
}

/// Largest singular value of a symmetric matrix.
inline double spectral_norm(const Matrix& W) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(W, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct BfgsUpdate {
  Matrix W;
  bool damped = false;
  bool reset = false;
  bool skipped = false;
};

/// Powell-damped BFGS update; resets to I when ||W_next||_2 leaves
/// [w_norm_min, w_norm_max] or the smallest eigenvalue drops below w_norm_min
/// (uniform bounds m <= eig(W) <= M, not just on the norm).
inline BfgsUpdate powell_bfgs_update(const Matrix& W, const Vector& s, const Vector& y_raw, double w_norm_min,
                                     double w_norm_max) {
  BfgsUpdate out;
  const Vector Ws = W * s;
  const double sWs = s.dot(Ws);
  if (s.squaredNorm() == 0.0 || !(sWs > 0.0)) {
    out.W = W;
    out.skipped = true;
    return out;
  }
  const double sy = s.dot(y_raw);
  Vector y_bar = y_raw;
  if (sy < 0.2 * sWs) {
    const double theta = 0.8 * sWs / (sWs - sy);
    y_bar = theta * y_raw + (1.0 - theta) * Ws;
    out.damped = true;
  }
  Matrix next = W - (Ws * Ws.transpose()) / sWs + (y_bar * y_bar.transpose()) / s.dot(y_bar);
  next = 0.5 * (next + next.transpose()).eval();

  bool ok = next.allFinite();
  if (ok) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(next, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
    ok = lo >= w_norm_min && norm <= w_norm_max;
  }
  if (!ok) {
    out.W = Matrix::Identity(W.rows(), W.cols());
    out.reset = true;
  } else {
    out.W = std::move(next);
  }
  return out;
}

/// y_k from gradients at x_k and x_{k+1} (both at rho_k) and the QP multipliers.
inline Vector lagrangian_gradient_difference(const Evaluation& before, const Evaluation& after,
                                             const QpSolution& sol, MultiplierSign sign) {
  const double s = sign == MultiplierSign::subtract ? -1.0 : 1.0;
  Vector y = after.grad_f - before.grad_f;
  for (std::size_t i = 0; i < before.ineq_grads.size(); ++i)
    y += s * sol.lam_g[static_cast<Index>(i)] * (after.ineq_grads[i] - before.ineq_grads[i]);
  for (std::size_t j = 0; j < before.eq_grads.size(); ++j) {
    const Index jj = static_cast<Index>(j);
    y += s * (sol.lam_plus[jj] - sol.lam_minus[jj]) * (after.eq_grads[j] - before.eq_grads[j]);
  }
  return y;
}

/// ||grad f + sum lam_g grad g + sum (lam+ - lam-) grad h|| at the record's
/// iterate; equals ||W d|| at an exact QP solution.
inline double stationarity_residual(const IterationRecord& rec) {
  Vector g = rec.grad_f;
  for (std::size_t i = 0; i < rec.grad_ineq.size(); ++i)
    g += rec.multipliers.lam_g[static_cast<Index>(i)] * rec.grad_ineq[i];
  for (std::size_t j = 0; j < rec.grad_eq.size(); ++j) {
    const Index jj = static_cast<Index>(j);
    g += (rec.multipliers.lam_plus[jj] - rec.multipliers.lam_minus[jj]) * rec.grad_eq[j];
  }
  return g.norm();
}

inline double stationarity_residual(const IterationRecord& rec, const Matrix& /*W*/) {
  return stationarity_residual(rec);
}

using IterationObserver = std::function<void(const IterationRecord&)>;

inline SolveResult run_solver(const ProblemInstance& prob, const Vector& x0, const SolverConfig& cfg,
                              const IterationObserver& observer = {}) {
  prob.validate();
  cfg.validate();
  if (x0.size() != prob.n) throw DomainError("initial point has the wrong dimension");
  if (!x0.allFinite()) throw DomainError("initial point is not finite");

  SolveResult result;
  Vector x = x0;
  double rho = cfg.rho0;
  double r = cfg.r0;
  Matrix W = Matrix::Identity(prob.n, prob.n);
  const QpOptions qp_opts{.tol = cfg.qp_tol};

  auto finish = [&](SolveStatus status, std::string message) {
    result.status = status;
    result.message = std::move(message);
    result.final_x = x;
    result.final_rho = rho;
    result.final_r = r;
    if (!result.trace.empty()) {
      const auto& last = result.trace.back();
      result.stationarity_residual = (last.W * last.d).norm();
      result.final_merit = last.merit_after;
      result.final_rho = last.rho;
      result.final_r = last.r;
    }
    return result;
  };

  std::optional<Evaluation> cached;  // evaluation at (x, rho) carried over from the previous iteration
  for (int k = 0; k < cfg.max_iter; ++k) {
    IterationRecord rec;
    rec.k = k;
    rec.x = x;
    rec.rho = rho;
    rec.r = r;
    rec.W = W;

    Evaluation ev;
    QpSolution sol;
    try {
      ev = cached ? std::move(*cached) : evaluate(prob, x, rho, true);
      cached.reset();
    } catch (const Error& e) {
      return finish(SolveStatus::evaluation_failure, e.what());
    }
    try {
      sol = solve_penalized_qp(assemble_qp(ev, W, r), qp_opts);
    } catch (const QpFailure& e) {
      return finish(SolveStatus::qp_failure, e.what());
    } catch (const MatrixError& e) {
      return finish(SolveStatus::qp_failure, e.what());
    }
    if (prob.unconstrained()) sol.xi = 0.0;

    rec.d = sol.d;
    rec.xi = sol.xi;
    rec.multipliers = sol;
    rec.d_norm = sol.d.norm();
    rec.dWd = sol.d.dot(W * sol.d);
    rec.grad_f = ev.grad_f;
    rec.grad_ineq = ev.ineq_grads;
    rec.grad_eq = ev.eq_grads;
    rec.ineq_values = ev.ineq_values;
    rec.eq_values = ev.eq_values;
    rec.stationarity_residual = stationarity_residual(rec);
    const MeritParams mp{rho, r};
    rec.directional_derivative = merit_directional_derivative(ev, sol.d, mp);

    // Step 2: penalty.
    rec.r_next = update_penalty(r, sol.xi, cfg.sigma_prime, cfg.eps_prime);
    rec.r_updated = rec.r_next != r;

    // Step 3: line search on theta_{rho_k, r_k}.
    LineSearchResult ls;
    try {
      ls = line_search(prob, x, sol.d, W, mp, cfg.beta, cfg.sigma1, cfg.max_backtracks);
    } catch (const LineSearchFailure& e) {
      rec.merit_before = merit_value(ev, mp);
      rec.merit_after = rec.merit_before;
      result.trace.push_back(rec);
      if (observer) observer(result.trace.back());
      return finish(SolveStatus::line_search_failure, e.what());
    } catch (const Error& e) {
      return finish(SolveStatus::evaluation_failure, e.what());
    }
    rec.alpha = ls.alpha;
    rec.backtracks = ls.backtracks;
    rec.merit_before = ls.merit_before;
    rec.merit_after = ls.merit_after;
    const Vector x_next = x + ls.alpha * sol.d;

    const auto smoothing = update_smoothing(rho, rec.d_norm, cfg.sigma, cfg.eta_hat, cfg.eps);
    rec.rho_updated = smoothing.updated;

    // W update in either case, with gradients at rho_k on both ends.
    Evaluation ev_next;
    try {
      ev_next = evaluate(prob, x_next, rho, true);
    } catch (const Error& e) {
      result.trace.push_back(rec);
      x = x_next;
      return finish(SolveStatus::evaluation_failure, e.what());
    }
    const Vector s = x_next - x;
    const Vector y = lagrangian_gradient_difference(ev, ev_next, sol, cfg.bfgs_sign);
    const auto upd = powell_bfgs_update(W, s, y, cfg.w_norm_min, cfg.w_norm_max);
    rec.w_reset = upd.reset;

    if (rec.rho_updated) result.d_small_set.push_back(k);
    result.trace.push_back(rec);
    if (observer) observer(result.trace.back());

    const double step = s.norm();
    x = x_next;
    if (!smoothing.updated) cached = std::move(ev_next);
    rho = smoothing.rho;
    r = rec.r_next;
    W = upd.W;
    if (step < cfg.eps1) return finish(SolveStatus::converged, "step below eps1");
  }
  return finish(SolveStatus::max_iter, "iteration cap reached");
}

}  // namespace smoothsqp
