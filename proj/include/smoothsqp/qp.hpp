#pragma once

// Penalized (elastic) SQP subproblem in (d, xi):
//
//   min  grad_f' d + 1/2 d' W d + r xi
//   s.t. g_i + grad_g_i' d <= xi,   h_j + grad_h_j' d <= xi,
//        -h_j - grad_h_j' d <= xi,  xi >= 0
//
// solved by a Mehrotra predictor-corrector interior-point method with an
// active-set polish step once the iterates are close.

#include "smoothsqp/core.hpp"
#include "smoothsqp/problem.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <optional>

namespace smoothsqp {

struct QpData {
  Index n = 0;
  Matrix W;
  Vector grad_f;
  Vector ineq_values;  ///< g_i(x), length p
  Matrix ineq_grads;   ///< p x n, row i = grad g_i(x)'
  Vector eq_values;    ///< h_j(x), length q - p
  Matrix eq_grads;     ///< (q-p) x n
  double r = 1.0;

  Index p() const { return ineq_values.size(); }
  Index me() const { return eq_values.size(); }
  /// Rows of the stacked constraint system, including xi >= 0.
  Index num_rows() const { return p() + 2 * me() + 1; }

  void validate() const {
    if (n <= 0) throw DomainError("QP dimension must be positive");
    if (W.rows() != n || W.cols() != n || grad_f.size() != n)
      throw DomainError("QP objective blocks have inconsistent dimensions");
    if (ineq_grads.rows() != p() || (p() > 0 && ineq_grads.cols() != n) || eq_grads.rows() != me() ||
        (me() > 0 && eq_grads.cols() != n))
      throw DomainError("QP constraint blocks have inconsistent dimensions");
    if (!(r > 0.0)) throw DomainError("penalty parameter must be positive");
  }
};

struct QpSolution {
  Vector d;
  double xi = 0.0;
  Vector lam_g;
  Vector lam_plus;
  Vector lam_minus;
  double lam_xi = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool polished = false;  ///< true when the active-set polish produced the answer
};

class QpFailure : public Error {
 public:
  QpFailure(const std::string& what, QpSolution best)
      : Error(what + " (residual " + std::to_string(best.kkt_residual) + ")"), best_(std::move(best)) {}
  const QpSolution& best() const noexcept { return best_; }

 private:
  QpSolution best_;
};

inline QpData assemble_qp(const Evaluation& ev, const Matrix& W, double r) {
  QpData qp;
  qp.n = ev.grad_f.size();
  qp.W = W;
  qp.grad_f = ev.grad_f;
  qp.r = r;
  qp.ineq_values = ev.ineq_values;
  qp.eq_values = ev.eq_values;
  qp.ineq_grads.resize(ev.ineq_values.size(), qp.n);
  qp.eq_grads.resize(ev.eq_values.size(), qp.n);
  for (Index i = 0; i < qp.p(); ++i) qp.ineq_grads.row(i) = ev.ineq_grads[i].transpose();
  for (Index j = 0; j < qp.me(); ++j) qp.eq_grads.row(j) = ev.eq_grads[j].transpose();
  qp.validate();
  return qp;
}

inline QpData assemble_qp(const ProblemInstance& prob, const Vector& x, double rho, const Matrix& W,
                          double r) {
  if (!(rho > 0.0)) throw DomainError("smoothing parameter must be positive");
  return assemble_qp(evaluate(prob, x, rho, true), W, r);
}

/// The always-feasible point (0, max{0, g, |h|}).
inline double trivial_feasible_xi(const QpData& qp) {
  return constraint_violation(qp.ineq_values, qp.eq_values);
}

inline double qp_objective(const QpData& qp, const Vector& d, double xi) {
  return qp.grad_f.dot(d) + 0.5 * d.dot(qp.W * d) + qp.r * xi;
}

/// Largest positive constraint violation of (d, xi); zero when feasible.
inline double qp_infeasibility(const QpData& qp, const Vector& d, double xi) {
  double worst = std::max(0.0, -xi);
  for (Index i = 0; i < qp.p(); ++i)
    worst = std::max(worst, qp.ineq_values[i] + qp.ineq_grads.row(i).dot(d) - xi);
  for (Index j = 0; j < qp.me(); ++j) {
    const double lin = qp.eq_values[j] + qp.eq_grads.row(j).dot(d);
    worst = std::max(worst, std::max(lin - xi, -lin - xi));
  }
  return worst;
}

struct KktResiduals {
  double stationarity = 0.0;         ///< ||grad_f + W d + sum lam grad||_2
  double multiplier_balance = 0.0;   ///< |r - sum of all multipliers|
  double ineq_complementarity = 0.0;
  double eq_plus_complementarity = 0.0;
  double eq_minus_complementarity = 0.0;
  double xi_complementarity = 0.0;

  double max() const {
    return std::max({stationarity, multiplier_balance, ineq_complementarity, eq_plus_complementarity,
                     eq_minus_complementarity, xi_complementarity});
  }
};

namespace detail {

// max(primal violation, dual violation, |min(lam, -slack)|) for one pair
// 0 <= lam  _|_  slack <= 0.
inline double complementarity_measure(double lam, double slack) {
  return std::max({std::max(0.0, slack), std::max(0.0, -lam), std::abs(std::min(lam, -slack))});
}

}  // namespace detail

inline KktResiduals kkt_residuals(const QpData& qp, const QpSolution& sol) {
  if (sol.d.size() != qp.n || sol.lam_g.size() != qp.p() || sol.lam_plus.size() != qp.me() ||
      sol.lam_minus.size() != qp.me())
    throw DomainError("QP solution dimensions do not match the data");
  KktResiduals res;
  Vector grad_l = qp.grad_f + qp.W * sol.d;
  if (qp.p() > 0) grad_l += qp.ineq_grads.transpose() * sol.lam_g;
  if (qp.me() > 0) grad_l += qp.eq_grads.transpose() * (sol.lam_plus - sol.lam_minus);
  res.stationarity = grad_l.norm();
  res.multiplier_balance =
      std::abs(qp.r - (sol.lam_g.sum() + sol.lam_plus.sum() + sol.lam_minus.sum() + sol.lam_xi));
  for (Index i = 0; i < qp.p(); ++i) {
    const double slack = qp.ineq_values[i] + qp.ineq_grads.row(i).dot(sol.d) - sol.xi;
    res.ineq_complementarity =
        std::max(res.ineq_complementarity, detail::complementarity_measure(sol.lam_g[i], slack));
  }
  for (Index j = 0; j < qp.me(); ++j) {
    const double lin = qp.eq_values[j] + qp.eq_grads.row(j).dot(sol.d);
    res.eq_plus_complementarity =
        std::max(res.eq_plus_complementarity, detail::complementarity_measure(sol.lam_plus[j], lin - sol.xi));
    res.eq_minus_complementarity = std::max(res.eq_minus_complementarity,
                                            detail::complementarity_measure(sol.lam_minus[j], -lin - sol.xi));
  }
  res.xi_complementarity = detail::complementarity_measure(sol.lam_xi, -sol.xi);
  return res;
}

/// Magnitude used to make the solver's stopping test scale-aware. Residuals
/// are accepted when below tol * qp_scale(qp).
inline double qp_scale(const QpData& qp) {
  double s = std::max(1.0, qp.r);
  if (qp.n > 0) s = std::max(s, qp.grad_f.cwiseAbs().maxCoeff());
  double grad_entry = 0.0;
  if (qp.p() > 0) {
    grad_entry = std::max(grad_entry, qp.ineq_grads.cwiseAbs().maxCoeff());
    s = std::max(s, qp.ineq_values.cwiseAbs().maxCoeff());
  }
  if (qp.me() > 0) {
    grad_entry = std::max(grad_entry, qp.eq_grads.cwiseAbs().maxCoeff());
    s = std::max(s, qp.eq_values.cwiseAbs().maxCoeff());
  }
  return std::max(s, qp.r * grad_entry);
}

struct QpOptions {
  double tol = 1e-10;
  int max_iter = 200;
  double xi_regularization = 1e-12;
};

namespace detail {

// Stacked form A z <= b over z = (d, xi).
struct StackedQp {
  Matrix H;
  Vector c;
  Matrix A;
  Vector b;
};

inline StackedQp stack(const QpData& qp) {
  const Index n = qp.n, p = qp.p(), me = qp.me(), m = qp.num_rows();
  StackedQp s;
  s.H = Matrix::Zero(n + 1, n + 1);
  s.H.topLeftCorner(n, n) = qp.W;
  s.c.resize(n + 1);
  s.c << qp.grad_f, qp.r;
  s.A = Matrix::Zero(m, n + 1);
  s.b.resize(m);
  for (Index i = 0; i < p; ++i) {
    s.A.row(i).head(n) = qp.ineq_grads.row(i);
    s.A(i, n) = -1.0;
    s.b[i] = -qp.ineq_values[i];
  }
  for (Index j = 0; j < me; ++j) {
    s.A.row(p + j).head(n) = qp.eq_grads.row(j);
    s.A(p + j, n) = -1.0;
    s.b[p + j] = -qp.eq_values[j];
    s.A.row(p + me + j).head(n) = -qp.eq_grads.row(j);
    s.A(p + me + j, n) = -1.0;
    s.b[p + me + j] = qp.eq_values[j];
  }
  s.A(m - 1, n) = -1.0;
  s.b[m - 1] = 0.0;
  return s;
}

inline QpSolution unstack(const QpData& qp, const Vector& z, const Vector& lam) {
  const Index n = qp.n, p = qp.p(), me = qp.me();
  QpSolution sol;
  sol.d = z.head(n);
  sol.xi = z[n];
  sol.lam_g = lam.head(p);
  sol.lam_plus = lam.segment(p, me);
  sol.lam_minus = lam.segment(p + me, me);
  sol.lam_xi = lam[p + 2 * me];
  return sol;
}

inline double step_to_boundary(const Vector& v, const Vector& dv) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  return alpha;
}

// Lawson-Hanson: min ||E lam - f|| subject to lam >= 0.
inline Vector nonnegative_least_squares(const Matrix& E, const Vector& f) {
  const Index k = E.cols();
  Vector lam = Vector::Zero(k);
  std::vector<bool> passive(static_cast<std::size_t>(k), false);
  const double tol = 1e-14 * std::max(1.0, E.cwiseAbs().maxCoeff()) * std::max(1.0, f.cwiseAbs().maxCoeff());
  for (int outer = 0; outer < 3 * static_cast<int>(k) + 3; ++outer) {
    const Vector w = E.transpose() * (f - E * lam);
    Index best = -1;
    for (Index j = 0; j < k; ++j)
      if (!passive[j] && w[j] > tol && (best < 0 || w[j] > w[best])) best = j;
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < 3 * static_cast<int>(k) + 3; ++inner) {
      std::vector<Index> idx;
      for (Index j = 0; j < k; ++j)
        if (passive[j]) idx.push_back(j);
      Matrix Ep(E.rows(), static_cast<Index>(idx.size()));
      for (std::size_t a = 0; a < idx.size(); ++a) Ep.col(static_cast<Index>(a)) = E.col(idx[a]);
      const Vector sp = Ep.completeOrthogonalDecomposition().solve(f);
      Vector trial = Vector::Zero(k);
      for (std::size_t a = 0; a < idx.size(); ++a) trial[idx[a]] = sp[static_cast<Index>(a)];
      bool positive = true;
      for (Index j : idx) positive = positive && trial[j] > 0.0;
      if (positive) {
        lam = trial;
        break;
      }
      double alpha = 1.0;
      for (Index j : idx)
        if (trial[j] <= 0.0) alpha = std::min(alpha, lam[j] / (lam[j] - trial[j]));
      lam += alpha * (trial - lam);
      for (Index j : idx)
        if (lam[j] <= tol) {
          lam[j] = 0.0;
          passive[j] = false;
        }
    }
  }
  return lam;
}

// Solves the equality-constrained QP on the guessed active set, then
// recovers nonnegative multipliers for that primal point. Returns the
// candidate only if it meets the tolerance.
inline std::optional<QpSolution> polish(const QpData& qp, const StackedQp& s, const Vector& slack,
                                        const Vector& lam, double tol) {
  const Index N = s.H.rows(), m = s.A.rows();
  std::vector<Index> active;
  for (Index i = 0; i < m; ++i)
    if (lam[i] > slack[i]) active.push_back(i);
  const Index k = static_cast<Index>(active.size());
  Matrix K = Matrix::Zero(N + k, N + k);
  Vector rhs(N + k);
  K.topLeftCorner(N, N) = s.H;
  rhs.head(N) = -s.c;
  Matrix E(N, k);
  for (Index a = 0; a < k; ++a) {
    K.block(N + a, 0, 1, N) = s.A.row(active[a]);
    K.block(0, N + a, N, 1) = s.A.row(active[a]).transpose();
    E.col(a) = s.A.row(active[a]).transpose();
    rhs[N + a] = s.b[active[a]];
  }
  const Vector sol = K.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite()) return std::nullopt;
  Vector z = sol.head(N);
  const double scale = qp_scale(qp);
  if (z[N - 1] < 0.0) {
    if (z[N - 1] < -tol * scale) return std::nullopt;
    z[N - 1] = 0.0;
  }
  const Vector lam_active = nonnegative_least_squares(E, -(s.H * z + s.c));
  Vector full_lam = Vector::Zero(m);
  for (Index a = 0; a < k; ++a) full_lam[active[a]] = lam_active[a];
  QpSolution cand = unstack(qp, z, full_lam);
  cand.kkt_residual = kkt_residuals(qp, cand).max();
  if (cand.kkt_residual > tol * scale) return std::nullopt;
  cand.polished = true;
  return cand;
}

}  // namespace detail

/// Solves the penalized QP. Throws MatrixError when W is not SPD and
/// QpFailure (carrying the best iterate) when the iteration cap is hit.
inline QpSolution solve_penalized_qp(const QpData& qp, const QpOptions& opts = {}) {
  qp.validate();
  if (!(opts.tol > 0.0)) throw DomainError("QP tolerance must be positive");
  const double wscale = std::max(1.0, qp.W.cwiseAbs().maxCoeff());
  if ((qp.W - qp.W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * wscale)
    throw MatrixError("W is not symmetric");
  if (Eigen::LLT<Matrix>(qp.W).info() != Eigen::Success)
    throw MatrixError("W is not positive definite");

  const double xi0 = trivial_feasible_xi(qp);
  assert(qp_infeasibility(qp, Vector::Zero(qp.n), xi0) <= 1e-12 * std::max(1.0, xi0));

  const detail::StackedQp s = detail::stack(qp);
  const Index N = qp.n + 1, m = qp.num_rows();
  const double scale = qp_scale(qp);
  const double tol = opts.tol;

  Vector z = Vector::Zero(N);
  z[N - 1] = xi0 + 1.0;
  Vector slack = s.b - s.A * z;
  Vector lam = Vector::Constant(m, (qp.r + 1.0) / static_cast<double>(m));

  QpSolution best;
  best.kkt_residual = std::numeric_limits<double>::infinity();

  for (int it = 0; it < opts.max_iter; ++it) {
    const Vector r_d = s.H * z + s.c + s.A.transpose() * lam;
    const Vector r_p = s.A * z + slack - s.b;
    const double mu = slack.dot(lam) / static_cast<double>(m);

    QpSolution current = detail::unstack(qp, z, lam);
    current.iterations = it;
    current.kkt_residual = kkt_residuals(qp, current).max();
    if (current.kkt_residual < best.kkt_residual) best = current;

    if (mu < 1e-6 * scale) {
      if (auto pol = detail::polish(qp, s, slack, lam, tol)) {
        pol->iterations = it;
        return *pol;
      }
    }
    if (current.kkt_residual <= tol * scale) return current;

    const Vector D = lam.cwiseQuotient(slack);
    Matrix K = s.H + s.A.transpose() * D.asDiagonal() * s.A;
    K(N - 1, N - 1) += opts.xi_regularization;
    Eigen::LDLT<Matrix> ldlt(K);
    if (ldlt.info() != Eigen::Success) throw QpFailure("interior-point Newton system is singular", best);

    auto newton = [&](const Vector& r_c, Vector& dz, Vector& dlam, Vector& ds) {
      // r_c is the complementarity residual S*lam - target.
      const Vector rhs = -r_d - s.A.transpose() * (lam.cwiseProduct(r_p) - r_c).cwiseQuotient(slack);
      dz = ldlt.solve(rhs);
      const Vector Adz = s.A * dz;
      dlam = (lam.cwiseProduct(Adz + r_p) - r_c).cwiseQuotient(slack);
      ds = -r_p - Adz;
    };

    Vector dz, dlam, ds;
    const Vector sl = slack.cwiseProduct(lam);
    newton(sl, dz, dlam, ds);
    const double a_aff = std::min(detail::step_to_boundary(slack, ds), detail::step_to_boundary(lam, dlam));
    const double mu_aff = (slack + a_aff * ds).dot(lam + a_aff * dlam) / static_cast<double>(m);
    const double sigma = std::pow(mu_aff / mu, 3);

    const Vector r_c = sl + ds.cwiseProduct(dlam) - Vector::Constant(m, sigma * mu);
    newton(r_c, dz, dlam, ds);
    auto max_step = [&] {
      return std::min(1.0, 0.995 * std::min(detail::step_to_boundary(slack, ds), detail::step_to_boundary(lam, dlam)));
    };
    double step = max_step();
    const double mu_new = (slack + step * ds).dot(lam + step * dlam) / static_cast<double>(m);
    if (step < 0.1 || mu_new > (1.0 - 0.01 * step) * mu) {
      // corrector misbehaved: plain centered Newton step instead
      newton(sl - Vector::Constant(m, std::max(sigma, 0.3) * mu), dz, dlam, ds);
      step = max_step();
    }
    z += step * dz;
    slack += step * ds;
    lam += step * dlam;
    slack = slack.cwiseMax(1e-300);
    lam = lam.cwiseMax(1e-300);
  }
  throw QpFailure("interior-point iteration cap reached", best);
}

}  // namespace smoothsqp
