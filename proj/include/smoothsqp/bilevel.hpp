#pragma once

// Simple bilevel programs  min F(x,y) s.t. y in argmin_{y' in Y} f(x,y')
// with a box Y, reformulated as the combined program over z = (x, y):
//   min F(z)  s.t.  f(x,y) - V(x) <= 0,  grad_y f(x,y) = 0,
// where V(x) = min_Y f(x,.) is smoothed by the entropy function
//   gamma_rho(x) = -ln( int_Y exp(-rho f(x,y)) dy ) / rho.

#include "smoothsqp/core.hpp"
#include "smoothsqp/problem.hpp"
#include "smoothsqp/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace smoothsqp {

struct BilevelProblem {
  using Scalar = std::function<double(const Vector& x, const Vector& y)>;
  using Gradient = std::function<Vector(const Vector& x, const Vector& y)>;
  using Jacobian = std::function<Matrix(const Vector& x, const Vector& y)>;

  std::string name;
  Index n = 0;
  Index m = 0;
  Scalar F;
  Gradient grad_F;           ///< (d/dx, d/dy), size n + m
  Scalar f;
  Gradient grad_f;           ///< (d/dx, d/dy), size n + m
  Jacobian grad_grad_y_f;    ///< row j = gradient of (grad_y f)_j, m x (n + m)
  Vector y_lower;
  Vector y_upper;

  void validate() const {
    if (n <= 0) throw DomainError("bilevel problem needs n > 0");
    if (m < 1 || m > 2) throw DomainError("lower-level dimension must be 1 or 2");
    if (y_lower.size() != m || y_upper.size() != m) throw DomainError("box Y has wrong dimension");
    for (Index i = 0; i < m; ++i)
      if (!(y_lower[i] < y_upper[i])) throw DomainError("box Y needs a_i < b_i");
    if (!F || !grad_F || !f || !grad_f || !grad_grad_y_f)
      throw DomainError("bilevel problem '" + name + "' is missing a function");
  }

  double volume() const { return (y_upper - y_lower).prod(); }
};

struct QuadratureConfig {
  int base_nodes_per_dim = 200;
  int refinement = 12;
  double quad_tol = 1e-10;

  void validate() const {
    if (base_nodes_per_dim <= 0 || refinement <= 0 || !(quad_tol > 0.0))
      throw DomainError("quadrature configuration entries must be positive");
  }
};

/// Largest rho the entropy smoothing accepts.
inline constexpr double kRhoCap = 1e12;

struct LowerLevelMinimum {
  Vector y;
  double value = 0.0;
};

struct ValueOracleResult {
  double value = 0.0;
  Vector argmin;
  /// Every polished local minimum found, sorted by value.
  std::vector<LowerLevelMinimum> minima;
};

namespace detail {

inline double face_distance(const BilevelProblem& bp, const Vector& y) {
  return std::min((y - bp.y_lower).minCoeff(), (bp.y_upper - y).minCoeff());
}

inline Vector clamp_box(const Vector& y, const Vector& lo, const Vector& hi) {
  return y.cwiseMax(lo).cwiseMin(hi);
}

// Gradient of f in y with components that push out of the box zeroed.
inline Vector projected_gradient(const Vector& g, const Vector& y, const Vector& lo, const Vector& hi) {
  Vector p = g;
  for (Index i = 0; i < g.size(); ++i)
    if ((y[i] <= lo[i] && g[i] > 0.0) || (y[i] >= hi[i] && g[i] < 0.0)) p[i] = 0.0;
  return p;
}

// Projected Newton descent on f(x, .) over the box from y0.
inline LowerLevelMinimum polish_minimum(const BilevelProblem& bp, const Vector& x, Vector y) {
  const Index m = bp.m;
  const Vector& lo = bp.y_lower;
  const Vector& hi = bp.y_upper;
  double fy = bp.f(x, y);
  for (int it = 0; it < 200; ++it) {
    const Vector g = bp.grad_f(x, y).tail(m);
    const Vector pg = projected_gradient(g, y, lo, hi);
    if (pg.norm() == 0.0) break;
    std::vector<Index> free;
    for (Index i = 0; i < m; ++i)
      if (pg[i] != 0.0 || (y[i] > lo[i] && y[i] < hi[i])) free.push_back(i);
    const Matrix H = bp.grad_grad_y_f(x, y).rightCols(m);
    Matrix Hf(free.size(), free.size());
    Vector gf(free.size());
    for (std::size_t a = 0; a < free.size(); ++a) {
      gf[a] = g[free[a]];
      for (std::size_t b = 0; b < free.size(); ++b) Hf(a, b) = H(free[a], free[b]);
    }
    Vector pf = -gf;
    Eigen::LLT<Matrix> llt(Hf);
    if (llt.info() == Eigen::Success) pf = -llt.solve(gf);
    Vector step = Vector::Zero(m);
    for (std::size_t a = 0; a < free.size(); ++a) step[free[a]] = pf[a];
    if (step.dot(g) >= 0.0) step = -pg;
    bool accepted = false;
    double t = 1.0;
    for (int bt = 0; bt < 80; ++bt, t *= 0.5) {
      const Vector yn = clamp_box(y + t * step, lo, hi);
      if ((yn - y).norm() == 0.0) break;
      const double fn = bp.f(x, yn);
      const bool lower = fn < fy;
      const bool level = fn <= fy + 4e-16 * std::abs(fy) &&
                         projected_gradient(bp.grad_f(x, yn).tail(m), yn, lo, hi).norm() < pg.norm();
      if (lower || level) {
        accepted = (yn - y).norm() > 1e-16 * (1.0 + y.norm());
        y = yn;
        fy = fn;
        break;
      }
    }
    if (!accepted) break;
  }
  return {y, fy};
}

}  // namespace detail

/// Brute-force grid minimisation of f(x, .) over Y followed by a projected
/// Newton polish of every grid-local minimum. Exact ties (relative 1e-10)
/// resolve to the minimiser farthest from the faces of Y.
inline ValueOracleResult value_function_oracle(const BilevelProblem& bp, const Vector& x, int grid_per_dim) {
  bp.validate();
  if (grid_per_dim < 2) throw DomainError("grid_per_dim must be at least 2");
  if (x.size() != bp.n) throw DomainError("upper-level point has wrong dimension");
  const Index m = bp.m;
  const int g = grid_per_dim;
  const Vector step = (bp.y_upper - bp.y_lower) / (g - 1);
  auto node = [&](int i, int j) {
    Vector y(m);
    y[0] = i == g - 1 ? bp.y_upper[0] : bp.y_lower[0] + i * step[0];
    if (m > 1) y[1] = j == g - 1 ? bp.y_upper[1] : bp.y_lower[1] + j * step[1];
    return y;
  };
  const int gj = m > 1 ? g : 1;
  std::vector<double> vals(static_cast<std::size_t>(g) * gj);
  auto at = [&](int i, int j) -> double& { return vals[static_cast<std::size_t>(i) * gj + j]; };
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < gj; ++j) at(i, j) = bp.f(x, node(i, j));

  struct Seed {
    double v;
    int i, j;
  };
  std::vector<Seed> seeds;
  Seed best{std::numeric_limits<double>::infinity(), 0, 0};
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < gj; ++j) {
      const double v = at(i, j);
      if (!std::isfinite(v)) throw EvaluationError("lower-level objective", "non-finite value on grid");
      if (v < best.v) best = {v, i, j};
      bool le_all = true, lt_any = false;
      for (int di = -1; di <= 1; ++di)
        for (int dj = (m > 1 ? -1 : 0); dj <= (m > 1 ? 1 : 0); ++dj) {
          if (di == 0 && dj == 0) continue;
          const int a = i + di, b = j + dj;
          if (a < 0 || a >= g || b < 0 || b >= gj) continue;
          le_all = le_all && v <= at(a, b);
          lt_any = lt_any || v < at(a, b);
        }
      if (le_all && lt_any) seeds.push_back({v, i, j});
    }
  }
  seeds.push_back(best);
  std::sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.v < b.v; });
  if (seeds.size() > 16) seeds.resize(16);

  ValueOracleResult out;
  const double merge = 1e-7 * (bp.y_upper - bp.y_lower).maxCoeff();
  for (const auto& s : seeds) {
    LowerLevelMinimum mn = detail::polish_minimum(bp, x, node(s.i, s.j));
    bool dup = false;
    for (auto& o : out.minima)
      if ((o.y - mn.y).norm() <= merge) {
        if (mn.value < o.value) o = mn;
        dup = true;
      }
    if (!dup) out.minima.push_back(mn);
  }
  std::sort(out.minima.begin(), out.minima.end(),
            [](const LowerLevelMinimum& a, const LowerLevelMinimum& b) { return a.value < b.value; });
  out.value = out.minima.front().value;
  const double tie = 1e-10 * std::max(1.0, std::abs(out.value));
  out.argmin = out.minima.front().y;
  double depth = detail::face_distance(bp, out.argmin);
  for (const auto& mn : out.minima)
    if (mn.value <= out.value + tie && detail::face_distance(bp, mn.y) > depth) {
      out.argmin = mn.y;
      depth = detail::face_distance(bp, mn.y);
    }
  return out;
}

struct EntropyValue {
  double gamma = 0.0;
  Vector gradient;
  double shift = 0.0;      ///< min f(x, .) used as the log-sum-exp shift
  double mass = 0.0;       ///< int_Y exp(-rho (f - shift))
  double error_bound = 0.0;
  double tolerance = 0.0;  ///< relative tolerance actually applied
  long evaluations = 0;
};

/// gamma_rho(x) and its gradient int w grad_x f / int w from one set of
/// quadrature nodes. Panels: base_nodes_per_dim / 16 uniform panels per axis
/// plus geometric ladders around every lower-level minimiser.
inline EntropyValue entropy_smoothing(const BilevelProblem& bp, const Vector& x, double rho,
                                      const QuadratureConfig& qc, bool with_gradient = true) {
  bp.validate();
  qc.validate();
  if (!(rho > 0.0)) throw DomainError("rho must be positive");
  if (rho > kRhoCap) throw QuadratureError("rho exceeds the supported cap 1e12", 0.0, 0.0);
  if (x.size() != bp.n) throw DomainError("upper-level point has wrong dimension");
  if (!x.allFinite()) throw DomainError("upper-level point is not finite");
  const Index m = bp.m;
  const ValueOracleResult oracle = value_function_oracle(bp, x, std::max(qc.base_nodes_per_dim, 2));

  std::vector<std::vector<double>> breaks(m);
  const int uniform = std::max(1, (qc.base_nodes_per_dim + 15) / 16);
  for (Index i = 0; i < m; ++i) {
    const double width = bp.y_upper[i] - bp.y_lower[i];
    std::vector<std::pair<double, double>> peaks;
    for (const auto& mn : oracle.minima) {
      const Vector gy = bp.grad_f(x, mn.y).tail(m);
      const double h = bp.grad_grad_y_f(x, mn.y)(i, bp.n + i);
      const double h0 = 1.0 / (std::sqrt(rho * std::max(h, 0.0)) + rho * std::abs(gy[i]) + 1.0 / width);
      peaks.emplace_back(mn.y[i], h0);
    }
    breaks[i] = peak_breakpoints(bp.y_lower[i], bp.y_upper[i], uniform, peaks);
  }

  const Index n = bp.n;
  BoltzmannIntegrand fn = [&](const Vector& y, double& f, Vector& g) {
    if (with_gradient) {
      f = bp.f(x, y);
      g = bp.grad_f(x, y).head(n);
    } else {
      f = bp.f(x, y);
    }
  };
  AdaptiveOptions ao;
  ao.max_depth = qc.refinement;
  // rounding in f is amplified by rho in the exponent; no rule resolves below that
  ao.tol = std::max(qc.quad_tol, 4.0 * std::numeric_limits<double>::epsilon() * rho * std::max(1.0, std::abs(oracle.value)));
  ao.with_moment = with_gradient;
  detail::BoltzmannIntegrator integ(fn, rho, oracle.value, with_gradient ? n : 0, ao);
  const BoltzmannSum s = integ.integrate(breaks);
  if (!(s.mass > 0.0) || !std::isfinite(s.mass))
    throw QuadratureError("Boltzmann integral is not positive and finite", s.mass, s.error);

  EntropyValue ev;
  ev.shift = oracle.value;
  ev.mass = s.mass;
  ev.gamma = oracle.value - std::log(s.mass) / rho;
  ev.error_bound = s.error / (rho * s.mass);
  ev.tolerance = ao.tol;
  ev.evaluations = integ.evaluations();
  if (with_gradient) ev.gradient = s.moment / s.mass;
  return ev;
}

inline double gamma(const BilevelProblem& bp, const Vector& x, double rho, const QuadratureConfig& qc = {}) {
  return entropy_smoothing(bp, x, rho, qc, false).gamma;
}

inline Vector grad_gamma(const BilevelProblem& bp, const Vector& x, double rho, const QuadratureConfig& qc = {}) {
  return entropy_smoothing(bp, x, rho, qc, true).gradient;
}

/// Thread-safe memo of entropy_smoothing keyed on the exact bytes of (x, rho).
class EntropyCache {
 public:
  EntropyCache(BilevelProblem bp, QuadratureConfig qc) : bp_(std::move(bp)), qc_(qc) {}

  EntropyValue get(const Vector& x, double rho) {
    std::string key(sizeof(double) * (x.size() + 1), '\0');
    std::memcpy(key.data(), x.data(), sizeof(double) * x.size());
    std::memcpy(key.data() + sizeof(double) * x.size(), &rho, sizeof(double));
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    EntropyValue ev = entropy_smoothing(bp_, x, rho, qc_, true);
    std::lock_guard<std::mutex> lock(mu_);
    if (memo_.size() >= 4096) memo_.clear();
    memo_.emplace(std::move(key), ev);
    return ev;
  }

 private:
  BilevelProblem bp_;
  QuadratureConfig qc_;
  std::mutex mu_;
  std::map<std::string, EntropyValue> memo_;
};

inline constexpr int kDefaultOracleGrid = 2001;

/// z = (x, y). Objective F; one inequality f - gamma_rho; m equalities
/// (grad_y f)_j. The inequality's base value uses the grid oracle for V.
inline ProblemInstance build_combined_program(const BilevelProblem& bp, const QuadratureConfig& qc = {},
                                              int oracle_grid = kDefaultOracleGrid) {
  bp.validate();
  qc.validate();
  const Index n = bp.n, m = bp.m, nz = n + m;
  auto cache = std::make_shared<EntropyCache>(bp, qc);

  ProblemInstance prob;
  prob.n = nz;
  prob.objective = smooth_function(
      "F", nz, [bp, n, m](const Vector& z) { return bp.F(z.head(n), z.tail(m)); },
      [bp, n, m](const Vector& z) { return Vector(bp.grad_F(z.head(n), z.tail(m))); });

  SmoothedFunction gap;
  gap.name = "f - gamma";
  gap.dimension = nz;
  gap.value_at = [bp, cache, n, m](const Vector& z, double rho) {
    return bp.f(z.head(n), z.tail(m)) - cache->get(z.head(n), rho).gamma;
  };
  gap.gradient_at = [bp, cache, n, m](const Vector& z, double rho) {
    Vector g = bp.grad_f(z.head(n), z.tail(m));
    g.head(n) -= cache->get(z.head(n), rho).gradient;
    return g;
  };
  gap.base_value_at = [bp, n, m, oracle_grid](const Vector& z) {
    return bp.f(z.head(n), z.tail(m)) - value_function_oracle(bp, z.head(n), oracle_grid).value;
  };
  prob.inequalities.push_back(std::move(gap));

  for (Index j = 0; j < m; ++j) {
    prob.equalities.push_back(smooth_function(
        "grad_y f[" + std::to_string(j) + "]", nz,
        [bp, n, m, j](const Vector& z) { return bp.grad_f(z.head(n), z.tail(m))[n + j]; },
        [bp, n, m, j](const Vector& z) {
          return Vector(bp.grad_grad_y_f(z.head(n), z.tail(m)).row(j).transpose());
        }));
  }
  return prob;
}

/// Distance of the oracle's lower-level minimiser from the faces of Y.
inline double interiority_margin(const BilevelProblem& bp, const Vector& x, int grid_per_dim = kDefaultOracleGrid) {
  return detail::face_distance(bp, value_function_oracle(bp, x, grid_per_dim).argmin);
}

/// Diagnostic form of the interiority assumption at x.
inline bool check_interiority(const BilevelProblem& bp, const Vector& x, double margin,
                              int grid_per_dim = kDefaultOracleGrid) {
  if (!(margin > 0.0)) throw DomainError("margin must be positive");
  return interiority_margin(bp, x, grid_per_dim) >= margin;
}

}  // namespace smoothsqp
