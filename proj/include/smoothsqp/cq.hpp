#pragma once

// Weak constraint-qualification verdicts over the gradient trajectory of a
// solver run. Limit vectors are estimated from the last (largest-rho)
// gradients of each cluster of tail iterates.

#include "smoothsqp/core.hpp"
#include "smoothsqp/lp.hpp"
#include "smoothsqp/problem.hpp"
#include "smoothsqp/sqp.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace smoothsqp {

struct ClusterMember {
  int k = 0;
  Vector x;
  double rho = 0.0;
  std::vector<Vector> grads_ineq;
  std::vector<Vector> grads_eq;
};

struct GradientCluster {
  Vector anchor;
  std::vector<ClusterMember> members;  // ascending k
  Vector ineq_values;                  // g_i at the anchor (base or surrogate)
  Vector eq_values;
  std::vector<Index> active_set;       // |g_i(anchor)| <= feas_tol
  std::vector<Vector> ineq_limits;     // v_i
  std::vector<Vector> eq_limits;       // v_j
  bool settled = false;
  double settle_gap = 0.0;             // largest change between the last two members' gradients

  Index n() const { return anchor.size(); }
};

struct ClusterOptions {
  double cluster_radius = 1e-2;
  double tail_fraction = 0.5;
  double grad_settle_tol = 1e-4;
  double feas_tol = 1e-6;
};

/// Values (g, h) at an anchor; rho_max is the largest rho among the members.
using AnchorValues = std::function<std::pair<Vector, Vector>(const Vector& anchor, double rho_max)>;

namespace detail {

inline void finish_cluster(GradientCluster& c, const AnchorValues& values, const ClusterOptions& opts) {
  std::sort(c.members.begin(), c.members.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
  // limit vectors: the largest-rho member, latest among ties
  const ClusterMember* best = &c.members.front();
  for (const auto& m : c.members)
    if (m.rho >= best->rho) best = &m;
  c.ineq_limits = best->grads_ineq;
  c.eq_limits = best->grads_eq;

  c.settled = false;
  c.settle_gap = std::numeric_limits<double>::infinity();
  if (c.members.size() >= 2) {
    const auto& a = c.members[c.members.size() - 2];
    const auto& b = c.members.back();
    double gap = 0.0;
    for (std::size_t i = 0; i < a.grads_ineq.size(); ++i) gap = std::max(gap, (a.grads_ineq[i] - b.grads_ineq[i]).norm());
    for (std::size_t j = 0; j < a.grads_eq.size(); ++j) gap = std::max(gap, (a.grads_eq[j] - b.grads_eq[j]).norm());
    c.settle_gap = gap;
    c.settled = gap <= opts.grad_settle_tol;
  }
  double rho_max = 0.0;
  for (const auto& m : c.members) rho_max = std::max(rho_max, m.rho);
  std::tie(c.ineq_values, c.eq_values) = values(c.anchor, rho_max);
  c.active_set.clear();
  for (Index i = 0; i < c.ineq_values.size(); ++i)
    if (std::abs(c.ineq_values[i]) <= opts.feas_tol) c.active_set.push_back(i);
}

}  // namespace detail

/// Groups tail iterates into clusters around tail anchors (greedy, latest
/// first). A final point, when given, anchors the first cluster.
inline std::vector<GradientCluster> collect_clusters(const std::vector<IterationRecord>& trace,
                                                     const AnchorValues& values, const ClusterOptions& opts = {},
                                                     const Vector* final_point = nullptr) {
  std::vector<GradientCluster> clusters;
  if (trace.size() < 2) return clusters;
  if (final_point) {
    clusters.emplace_back();
    clusters.back().anchor = *final_point;
  }
  if (!(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0)) throw DomainError("tail_fraction must lie in (0, 1]");
  if (!(opts.cluster_radius > 0.0)) throw DomainError("cluster_radius must be positive");
  const std::size_t tail = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(opts.tail_fraction * static_cast<double>(trace.size()))));
  const std::size_t first = trace.size() - std::min(tail, trace.size());
  for (std::size_t idx = trace.size(); idx-- > first;) {
    const auto& rec = trace[idx];
    GradientCluster* home = nullptr;
    for (auto& c : clusters)
      if ((rec.x - c.anchor).norm() <= opts.cluster_radius) {
        home = &c;
        break;
      }
    if (!home) {
      clusters.emplace_back();
      home = &clusters.back();
      home->anchor = rec.x;
    }
    home->members.push_back({rec.k, rec.x, rec.rho, rec.grad_ineq, rec.grad_eq});
  }
  std::erase_if(clusters, [](const GradientCluster& c) { return c.members.empty(); });
  for (auto& c : clusters) detail::finish_cluster(c, values, opts);
  return clusters;
}

namespace detail {

/// Anchor values from the problem: base functions where available,
/// otherwise the family at the largest member rho.
inline AnchorValues problem_anchor_values(const ProblemInstance& prob) {
  return [&prob](const Vector& x, double rho) {
    auto eval = [&](const std::vector<SmoothedFunction>& fams) {
      Vector v(static_cast<Index>(fams.size()));
      for (std::size_t i = 0; i < fams.size(); ++i)
        v[static_cast<Index>(i)] = fams[i].has_base() ? fams[i].base_value_at(x) : fams[i].value_at(x, rho);
      return v;
    };
    return std::make_pair(eval(prob.inequalities), eval(prob.equalities));
  };
}

}  // namespace detail

inline std::vector<GradientCluster> collect_clusters(const std::vector<IterationRecord>& trace,
                                                     const ProblemInstance& prob, const ClusterOptions& opts = {}) {
  return collect_clusters(trace, detail::problem_anchor_values(prob), opts);
}

/// Clusters of a finished run; the tail cluster is anchored at final_x.
inline std::vector<GradientCluster> collect_clusters(const SolveResult& result, const ProblemInstance& prob,
                                                     const ClusterOptions& opts = {}) {
  return collect_clusters(result.trace, detail::problem_anchor_values(prob), opts, &result.final_x);
}

enum class CqKind { wnnamcq, wgmfcq, ewnnamcq, ewgmfcq };

inline const char* to_string(CqKind k) {
  switch (k) {
    case CqKind::wnnamcq: return "WNNAMCQ";
    case CqKind::wgmfcq: return "WGMFCQ";
    case CqKind::ewnnamcq: return "EWNNAMCQ";
    case CqKind::ewgmfcq: return "EWGMFCQ";
  }
  return "unknown";
}

struct CqVerdict {
  CqKind kind = CqKind::wnnamcq;
  bool holds = false;
  /// violating multipliers (inequalities in index order, then equalities),
  /// ||.||_1 = 1; empty when holds
  Vector certificate;
  std::vector<Index> ineq_indices;  // which inequalities the certificate refers to
  std::string evidence;
  std::vector<Vector> limit_vectors_used;
};

struct CqOptions {
  double feas_tol = 1e-6;
  double rank_tol = 1e-10;  // relative singular-value threshold
  double cert_tol = 1e-8;
  double d_box = 1e6;
  double lp_tol = 1e-9;
};

namespace detail {

inline Matrix columns(const std::vector<Vector>& vs, Index n) {
  Matrix M(n, static_cast<Index>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) M.col(static_cast<Index>(i)) = vs[i];
  return M;
}

struct RangeSplit {
  Index rank = 0;
  Matrix range_basis;   // orthonormal basis of range(V)
  Matrix orth_basis;    // orthonormal basis of range(V)^perp
  Vector null_vector;   // a unit null vector of V when rank < cols
};

inline RangeSplit split_range(const Matrix& V, double rank_tol) {
  const Index n = V.rows();
  RangeSplit out;
  if (V.cols() == 0) {
    out.orth_basis = Matrix::Identity(n, n);
    out.range_basis = Matrix(n, 0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(V, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double top = sv.size() > 0 ? sv[0] : 0.0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_tol * std::max(top, 1e-300) && sv[i] > 0.0) ++out.rank;
  out.range_basis = svd.matrixU().leftCols(out.rank);
  out.orth_basis = svd.matrixU().rightCols(n - out.rank);
  if (out.rank < V.cols()) out.null_vector = svd.matrixV().col(V.cols() - 1);
  return out;
}

// Search for lam_I >= 0, 1'lam_I = 1, lam_E with V_I lam_I + V_E lam_E = 0
// and optionally g'lam_I + h'lam_E >= 0. Returns the normalized certificate.
inline std::optional<Vector> abnormal_multiplier(const Matrix& VI, const Matrix& VE, const Vector* g, const Vector* h,
                                                 const CqOptions& opts, std::string& evidence) {
  const Index n = VI.rows(), p = VI.cols(), q = VE.cols();
  const RangeSplit rs = split_range(VE, opts.rank_tol);
  if (rs.rank < q) {
    // lam_I = 0, lam_E in null(V_E); the sign can be chosen to make h'lam_E >= 0
    Vector lam = Vector::Zero(p + q);
    lam.tail(q) = rs.null_vector;
    if (h && h->dot(rs.null_vector) < 0.0) lam.tail(q) = -rs.null_vector;
    lam /= lam.lpNorm<1>();
    evidence = "equality limit vectors are linearly dependent (rank " + std::to_string(rs.rank) + " < " +
               std::to_string(q) + ")";
    return lam;
  }
  if (p == 0) {
    evidence = "no inequality terms and independent equality vectors";
    return std::nullopt;
  }
  Matrix pinv = Matrix::Zero(q, n);
  if (q > 0) pinv = VE.completeOrthogonalDecomposition().pseudoInverse();

  LinearProgram lp(p);
  const Matrix rows = rs.orth_basis.transpose() * VI;
  for (Index i = 0; i < rows.rows(); ++i) lp.add_eq(rows.row(i).transpose(), 0.0);
  lp.add_eq(Vector::Ones(p), 1.0);
  if (g) {
    Vector w = *g;
    if (q > 0) w -= VI.transpose() * (pinv.transpose() * *h);
    lp.add_ub(-w, 0.0);
  }
  const LpResult res = solve_lp(lp, 1e-12);
  if (res.status != LpStatus::optimal) {
    evidence = res.status == LpStatus::infeasible ? "multiplier system infeasible (LP)" : "LP did not finish";
    if (res.status != LpStatus::infeasible) throw InconclusiveError("multiplier LP did not terminate");
    return std::nullopt;
  }
  Vector lam(p + q);
  lam.head(p) = res.x.cwiseMax(0.0);
  if (q > 0) lam.tail(q) = -pinv * (VI * lam.head(p));
  lam /= lam.lpNorm<1>();
  evidence = "nonzero multiplier found by LP";
  return lam;
}

inline void require_settled(const GradientCluster& c) {
  if (!c.settled)
    throw InconclusiveError("cluster gradients have not settled (gap " + std::to_string(c.settle_gap) + ")");
}

}  // namespace detail

/// 0 = sum_{i in I} lam_i v_i + sum_j lam_j v_j with lam_I >= 0 forces lam = 0.
inline CqVerdict check_wnnamcq(const GradientCluster& c, const CqOptions& opts = {}) {
  detail::require_settled(c);
  for (Index i = 0; i < c.ineq_values.size(); ++i)
    if (c.ineq_values[i] > opts.feas_tol) throw InconclusiveError("anchor violates an inequality");
  for (Index j = 0; j < c.eq_values.size(); ++j)
    if (std::abs(c.eq_values[j]) > opts.feas_tol) throw InconclusiveError("anchor violates an equality");

  CqVerdict v;
  v.kind = CqKind::wnnamcq;
  v.ineq_indices = c.active_set;
  std::vector<Vector> active;
  for (Index i : c.active_set) active.push_back(c.ineq_limits[static_cast<std::size_t>(i)]);
  v.limit_vectors_used = active;
  v.limit_vectors_used.insert(v.limit_vectors_used.end(), c.eq_limits.begin(), c.eq_limits.end());
  const auto cert = detail::abnormal_multiplier(detail::columns(active, c.n()), detail::columns(c.eq_limits, c.n()),
                                                nullptr, nullptr, opts, v.evidence);
  v.holds = !cert.has_value();
  if (cert) v.certificate = *cert;
  return v;
}

/// No nonzero lam (lam_I >= 0) with 0 = sum lam v and sum lam_i g_i + sum lam_j h_j >= 0.
inline CqVerdict check_ewnnamcq(const GradientCluster& c, const CqOptions& opts = {}) {
  detail::require_settled(c);
  CqVerdict v;
  v.kind = CqKind::ewnnamcq;
  for (Index i = 0; i < c.ineq_values.size(); ++i) v.ineq_indices.push_back(i);
  v.limit_vectors_used = c.ineq_limits;
  v.limit_vectors_used.insert(v.limit_vectors_used.end(), c.eq_limits.begin(), c.eq_limits.end());
  const auto cert =
      detail::abnormal_multiplier(detail::columns(c.ineq_limits, c.n()), detail::columns(c.eq_limits, c.n()),
                                  &c.ineq_values, &c.eq_values, opts, v.evidence);
  v.holds = !cert.has_value();
  if (cert) v.certificate = *cert;
  return v;
}

/// Equality limit vectors independent, and some d with g_i + v_i'd < 0 for
/// all i and h_j + v_j'd = 0.
inline CqVerdict check_ewgmfcq(const GradientCluster& c, const CqOptions& opts = {}) {
  detail::require_settled(c);
  CqVerdict v;
  v.kind = CqKind::ewgmfcq;
  v.limit_vectors_used = c.ineq_limits;
  v.limit_vectors_used.insert(v.limit_vectors_used.end(), c.eq_limits.begin(), c.eq_limits.end());
  const Index n = c.n(), p = c.ineq_values.size(), q = c.eq_values.size();
  const Matrix VE = detail::columns(c.eq_limits, n);
  const auto rs = detail::split_range(VE, opts.rank_tol);
  if (rs.rank < q) {
    v.holds = false;
    v.evidence = "equality limit vectors are linearly dependent";
    return v;
  }
  if (p == 0 && q == 0) {
    v.holds = true;
    v.certificate = Vector::Zero(n + 1);
    v.certificate[n] = 1.0;
    v.evidence = "no constraints";
    return v;
  }
  // variables (d, s): max s
  LinearProgram lp(n + 1);
  lp.c[n] = -1.0;
  lp.lower.head(n).setConstant(-opts.d_box);
  lp.upper.head(n).setConstant(opts.d_box);
  lp.lower[n] = -std::numeric_limits<double>::infinity();
  lp.upper[n] = 1.0;
  for (Index i = 0; i < p; ++i) {
    Vector row(n + 1);
    row << c.ineq_limits[static_cast<std::size_t>(i)], 1.0;
    lp.add_ub(row, -c.ineq_values[i]);
  }
  for (Index j = 0; j < q; ++j) {
    Vector row(n + 1);
    row << c.eq_limits[static_cast<std::size_t>(j)], 0.0;
    lp.add_eq(row, -c.eq_values[j]);
  }
  const LpResult res = solve_lp(lp, 1e-12);
  if (res.status == LpStatus::infeasible) {
    v.holds = false;
    v.evidence = "linearized equalities have no solution in the d box";
    return v;
  }
  if (res.status != LpStatus::optimal) throw InconclusiveError("EWGMFCQ LP did not terminate");
  const double s = res.x[n];
  v.holds = s > opts.lp_tol;
  v.certificate = res.x;  // (d, s) as evidence
  v.evidence = "max margin s = " + std::to_string(s);
  return v;
}

/// The two bilevel vectors grad f - (grad gamma, 0) and grad(grad_y f) are
/// linearly independent.
inline bool check_bilevel_wnnamcq(const Vector& grad_f_diff, const Vector& grad_eq, double rank_tol = 1e-8) {
  if (grad_f_diff.size() != grad_eq.size()) throw DomainError("vector dimensions differ");
  if (!grad_f_diff.allFinite() || !grad_eq.allFinite()) throw DomainError("non-finite vector");
  Matrix M(2, grad_f_diff.size());
  M.row(0) = grad_f_diff.transpose();
  M.row(1) = grad_eq.transpose();
  Eigen::JacobiSVD<Matrix> svd(M);
  const Vector& sv = svd.singularValues();
  if (sv.size() < 2 || sv[0] == 0.0) return false;
  return sv[1] > rank_tol * sv[0];
}

/// Residual of a certificate against the defining system: max of the
/// stationarity norm, |1 - ||lam||_1| and the sign violations.
inline double certificate_residual(const GradientCluster& c, const CqVerdict& v) {
  if (v.holds || v.certificate.size() == 0) return 0.0;
  const Index p = static_cast<Index>(v.ineq_indices.size());
  Vector sum = Vector::Zero(c.n());
  double signed_values = 0.0, worst = 0.0;
  for (Index a = 0; a < p; ++a) {
    const auto i = static_cast<std::size_t>(v.ineq_indices[static_cast<std::size_t>(a)]);
    sum += v.certificate[a] * c.ineq_limits[i];
    signed_values += v.certificate[a] * c.ineq_values[static_cast<Index>(i)];
    worst = std::max(worst, -v.certificate[a]);
  }
  for (std::size_t j = 0; j < c.eq_limits.size(); ++j) {
    sum += v.certificate[p + static_cast<Index>(j)] * c.eq_limits[j];
    signed_values += v.certificate[p + static_cast<Index>(j)] * c.eq_values[static_cast<Index>(j)];
  }
  worst = std::max({worst, sum.norm(), std::abs(1.0 - v.certificate.lpNorm<1>())});
  if (v.kind == CqKind::ewnnamcq) worst = std::max(worst, -signed_values);
  return worst;
}

}  // namespace smoothsqp
