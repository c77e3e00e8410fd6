#pragma once

#include "smoothsqp/problem.hpp"
#include "smoothsqp/qp.hpp"

#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace smoothsqp::testing {

/// Seed for randomized tests; SMOOTHSQP_SEED overrides the default.
inline std::uint64_t test_seed(std::uint64_t fallback = 20240611) {
  if (const char* env = std::getenv("SMOOTHSQP_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
    }
  }
  return fallback;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  Vector vector(Index n, double lo = -1.0, double hi = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }
  Matrix matrix(Index r, Index c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }
  Matrix spd(Index n, double shift = 0.1) {
    const Matrix b = matrix(n, n);
    return b * b.transpose() + shift * Matrix::Identity(n, n);
  }

 private:
  std::mt19937_64 gen_;
};

inline QpData random_qp(Rng& rng, Index n, Index p, Index me, double r_lo = 0.5, double r_hi = 5.0) {
  QpData qp;
  qp.n = n;
  qp.W = rng.spd(n);
  qp.grad_f = rng.vector(n);
  qp.ineq_values = rng.vector(p);
  qp.ineq_grads = rng.matrix(p, n);
  qp.eq_values = rng.vector(me);
  qp.eq_grads = rng.matrix(me, n);
  qp.r = rng.uniform(r_lo, r_hi);
  return qp;
}

struct EnumerationResult {
  double objective = std::numeric_limits<double>::infinity();
  Vector d;
  double xi = 0.0;
  int kkt_points = 0;
};

/// Brute-force oracle: for every subset of the linearized constraints
/// (each equality contributes two rows, plus xi >= 0) solve the
/// equality-constrained QP, keep the primal/dual feasible candidates and
/// return the best objective. Intended for tiny instances only.
inline EnumerationResult enumerate_active_sets(const QpData& qp, double tol = 1e-9) {
  const Index n = qp.n, N = n + 1;
  std::vector<Vector> rows;
  std::vector<double> rhs;
  for (Index i = 0; i < qp.p(); ++i) {
    Vector a(N);
    a << qp.ineq_grads.row(i).transpose(), -1.0;
    rows.push_back(a);
    rhs.push_back(-qp.ineq_values[i]);
  }
  for (Index j = 0; j < qp.me(); ++j) {
    Vector a(N);
    a << qp.eq_grads.row(j).transpose(), -1.0;
    rows.push_back(a);
    rhs.push_back(-qp.eq_values[j]);
    a.head(n) = -qp.eq_grads.row(j).transpose();
    rows.push_back(a);
    rhs.push_back(qp.eq_values[j]);
  }
  {
    Vector a = Vector::Zero(N);
    a[n] = -1.0;
    rows.push_back(a);
    rhs.push_back(0.0);
  }
  Matrix H = Matrix::Zero(N, N);
  H.topLeftCorner(n, n) = qp.W;
  Vector c(N);
  c << qp.grad_f, qp.r;

  const int m = static_cast<int>(rows.size());
  EnumerationResult best;
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) act.push_back(i);
    const Index k = static_cast<Index>(act.size());
    Matrix K = Matrix::Zero(N + k, N + k);
    Vector b(N + k);
    K.topLeftCorner(N, N) = H;
    b.head(N) = -c;
    for (Index a = 0; a < k; ++a) {
      K.block(N + a, 0, 1, N) = rows[act[a]].transpose();
      K.block(0, N + a, N, 1) = rows[act[a]];
      b[N + a] = rhs[act[a]];
    }
    const Vector sol = K.fullPivHouseholderQr().solve(b);
    if (!sol.allFinite() || (K * sol - b).cwiseAbs().maxCoeff() > tol) continue;
    bool ok = true;
    for (Index a = 0; a < k; ++a) ok = ok && sol[N + a] >= -tol;
    const Vector z = sol.head(N);
    for (int i = 0; i < m; ++i) ok = ok && rows[i].dot(z) <= rhs[i] + tol;
    if (!ok) continue;
    ++best.kkt_points;
    const double obj = c.dot(z) + 0.5 * z.dot(H * z);
    if (obj < best.objective) {
      best.objective = obj;
      best.d = z.head(n);
      best.xi = z[n];
    }
  }
  return best;
}

/// Quadratic family c + a'x + 1/2 x'Qx (rho-independent).
inline SmoothedFunction random_quadratic(Rng& rng, const std::string& name, Index n, double curvature = 1.0) {
  const double c = rng.uniform();
  const Vector a = rng.vector(n);
  const Matrix B = rng.matrix(n, n);
  const Matrix Q = curvature * 0.5 * (B + B.transpose());
  return smooth_function(
      name, n, [=](const Vector& x) { return c + a.dot(x) + 0.5 * x.dot(Q * x); },
      [=](const Vector& x) -> Vector { return a + Q * x; });
}

inline ProblemInstance random_smooth_problem(Rng& rng, Index n, Index p, Index me) {
  ProblemInstance prob;
  prob.n = n;
  prob.objective = random_quadratic(rng, "f", n);
  for (Index i = 0; i < p; ++i) prob.inequalities.push_back(random_quadratic(rng, "g" + std::to_string(i), n));
  for (Index j = 0; j < me; ++j) prob.equalities.push_back(random_quadratic(rng, "h" + std::to_string(j), n));
  return prob;
}

/// Smoothing family sqrt(t^2 + rho^-2) of |t| applied to t = a'x + c.
inline SmoothedFunction smoothed_abs_affine(const std::string& name, const Vector& a, double c) {
  SmoothedFunction fn;
  fn.name = name;
  fn.dimension = a.size();
  fn.value_at = [=](const Vector& x, double rho) {
    const double t = a.dot(x) + c;
    return std::sqrt(t * t + 1.0 / (rho * rho));
  };
  fn.gradient_at = [=](const Vector& x, double rho) -> Vector {
    const double t = a.dot(x) + c;
    return a * (t / std::sqrt(t * t + 1.0 / (rho * rho)));
  };
  fn.base_value_at = [=](const Vector& x) { return std::abs(a.dot(x) + c); };
  return fn;
}

}  // namespace smoothsqp::testing
