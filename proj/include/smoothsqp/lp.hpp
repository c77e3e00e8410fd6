#pragma once

// Small dense linear programs for the constraint-qualification checks.
// Two-phase tableau simplex with Bland's rule; desk-scale only.

#include "smoothsqp/core.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace smoothsqp {

/// min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lower <= x <= upper.
/// Bounds may be infinite.
struct LinearProgram {
  Vector c;
  Matrix A_eq;
  Vector b_eq;
  Matrix A_ub;
  Vector b_ub;
  Vector lower;
  Vector upper;

  explicit LinearProgram(Index n = 0)
      : c(Vector::Zero(n)),
        A_eq(0, n),
        b_eq(0),
        A_ub(0, n),
        b_ub(0),
        lower(Vector::Zero(n)),
        upper(Vector::Constant(n, std::numeric_limits<double>::infinity())) {}

  Index num_vars() const { return c.size(); }

  void add_eq(const Vector& row, double rhs) { append(A_eq, b_eq, row, rhs); }
  void add_ub(const Vector& row, double rhs) { append(A_ub, b_ub, row, rhs); }

 private:
  static void append(Matrix& A, Vector& b, const Vector& row, double rhs) {
    A.conservativeResize(A.rows() + 1, row.size());
    A.row(A.rows() - 1) = row.transpose();
    b.conservativeResize(b.size() + 1);
    b[b.size() - 1] = rhs;
  }
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
  LpStatus status = LpStatus::infeasible;
  Vector x;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

class Tableau {
 public:
  Tableau(Matrix t, std::vector<Index> basis, double eps) : t_(std::move(t)), basis_(std::move(basis)), eps_(eps) {}

  // Minimizes the objective stored in the last row over columns [0, ncols).
  LpStatus optimize(Index ncols, int max_pivots) {
    const Index m = rows();
    for (int it = 0; it < max_pivots; ++it) {
      Index enter = -1;
      for (Index j = 0; j < ncols; ++j)
        if (t_(m, j) < -eps_) {
          enter = j;
          break;
        }
      if (enter < 0) return LpStatus::optimal;
      Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < m; ++i) {
        if (t_(i, enter) > eps_) {
          const double ratio = t_(i, rhs_col()) / t_(i, enter);
          const bool tie = leave >= 0 && std::abs(ratio - best) <= eps_;
          if ((!tie && ratio < best) || (tie && basis_[i] < basis_[leave])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return LpStatus::unbounded;
      pivot(leave, enter);
    }
    return LpStatus::iteration_limit;
  }

  void pivot(Index row, Index col) {
    t_.row(row) /= t_(row, col);
    for (Index i = 0; i < t_.rows(); ++i)
      if (i != row && t_(i, col) != 0.0) t_.row(i) -= t_(i, col) * t_.row(row);
    basis_[row] = col;
  }

  Index rows() const { return t_.rows() - 1; }
  Index rhs_col() const { return t_.cols() - 1; }
  Matrix& table() { return t_; }
  std::vector<Index>& basis() { return basis_; }

 private:
  Matrix t_;
  std::vector<Index> basis_;
  double eps_;
};

// min c'x, A x = b, x >= 0.
inline LpResult solve_standard_form(const Matrix& A, const Vector& b, const Vector& c, double eps) {
  const Index m = A.rows(), n = A.cols();
  const int max_pivots = 50 * static_cast<int>(m + n + 10);
  Matrix t = Matrix::Zero(m + 1, n + m + 1);
  std::vector<Index> basis(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const double sgn = b[i] < 0.0 ? -1.0 : 1.0;
    t.row(i).head(n) = sgn * A.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m) = sgn * b[i];
    basis[i] = n + i;
  }
  // Phase 1 objective: sum of artificials, expressed in nonbasic terms.
  for (Index i = 0; i < m; ++i) {
    t.row(m).head(n) -= t.row(i).head(n);
    t(m, n + m) -= t(i, n + m);
  }
  Tableau tab(std::move(t), std::move(basis), eps);
  LpResult res;
  const LpStatus s1 = tab.optimize(n + m, max_pivots);
  if (s1 == LpStatus::iteration_limit) {
    res.status = s1;
    return res;
  }
  const double scale = m > 0 ? std::max(1.0, b.cwiseAbs().maxCoeff()) : 1.0;
  if (-tab.table()(m, n + m) > 1e-9 * scale) {
    res.status = LpStatus::infeasible;
    return res;
  }
  // Drive artificials out of the basis where possible.
  for (Index i = 0; i < m; ++i) {
    if (tab.basis()[i] < n) continue;
    for (Index j = 0; j < n; ++j)
      if (std::abs(tab.table()(i, j)) > eps) {
        tab.pivot(i, j);
        break;
      }
  }
  // Phase 2 over the original columns only; a redundant row keeps its
  // artificial basic at zero.
  Matrix& T = tab.table();
  T.row(m).setZero();
  T.row(m).head(n) = c.transpose();
  for (Index i = 0; i < m; ++i) {
    const Index bi = tab.basis()[i];
    if (bi < n && T(m, bi) != 0.0) T.row(m) -= T(m, bi) * T.row(i);
  }
  const LpStatus s2 = tab.optimize(n, max_pivots);
  res.status = s2;
  if (s2 != LpStatus::optimal) return res;
  res.x = Vector::Zero(n);
  for (Index i = 0; i < m; ++i)
    if (tab.basis()[i] < n) res.x[tab.basis()[i]] = T(i, n + m);
  res.objective = c.dot(res.x);
  return res;
}

}  // namespace detail

/// Solves a general-form LP by reduction to standard form.
inline LpResult solve_lp(const LinearProgram& lp, double eps = 1e-11) {
  const Index n = lp.num_vars();
  const double inf = std::numeric_limits<double>::infinity();
  // x = offset + sum_k T(:,k) u_k,  u >= 0
  std::vector<std::pair<Index, double>> cols;  // (original var, sign)
  Vector offset = Vector::Zero(n);
  std::vector<std::pair<Index, double>> upper_rows;  // (u column, bound)
  for (Index i = 0; i < n; ++i) {
    const double lo = lp.lower[i], hi = lp.upper[i];
    if (lo > -inf) {
      offset[i] = lo;
      cols.emplace_back(i, 1.0);
      if (hi < inf) upper_rows.emplace_back(static_cast<Index>(cols.size()) - 1, hi - lo);
    } else if (hi < inf) {
      offset[i] = hi;
      cols.emplace_back(i, -1.0);
    } else {
      cols.emplace_back(i, 1.0);
      cols.emplace_back(i, -1.0);
    }
  }
  const Index nu = static_cast<Index>(cols.size());
  Matrix T = Matrix::Zero(n, nu);
  for (Index k = 0; k < nu; ++k) T(cols[k].first, k) = cols[k].second;

  const Index n_ub = lp.A_ub.rows() + static_cast<Index>(upper_rows.size());
  const Index n_eq = lp.A_eq.rows();
  const Index total = nu + n_ub;
  Matrix A = Matrix::Zero(n_eq + n_ub, total);
  Vector b(n_eq + n_ub);
  if (n_eq > 0) {
    A.topLeftCorner(n_eq, nu) = lp.A_eq * T;
    b.head(n_eq) = lp.b_eq - lp.A_eq * offset;
  }
  Index row = n_eq;
  for (Index i = 0; i < lp.A_ub.rows(); ++i, ++row) {
    A.block(row, 0, 1, nu) = lp.A_ub.row(i) * T;
    A(row, nu + (row - n_eq)) = 1.0;
    b[row] = lp.b_ub[i] - lp.A_ub.row(i).dot(offset);
  }
  for (const auto& [col, bound] : upper_rows) {
    A(row, col) = 1.0;
    A(row, nu + (row - n_eq)) = 1.0;
    b[row] = bound;
    ++row;
  }
  Vector c = Vector::Zero(total);
  c.head(nu) = T.transpose() * lp.c;

  const LpResult std_res = detail::solve_standard_form(A, b, c, eps);
  LpResult res;
  res.status = std_res.status;
  if (std_res.status == LpStatus::optimal) {
    res.x = offset + T * std_res.x.head(nu);
    res.objective = lp.c.dot(res.x);
  }
  return res;
}

}  // namespace smoothsqp
