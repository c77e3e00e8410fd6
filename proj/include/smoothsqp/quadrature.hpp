#pragma once

// Adaptive composite Gauss-Legendre quadrature of Boltzmann integrals
//   I = int_Y exp(-rho (f(y) - c)) dy,   J = int_Y exp(-rho (f(y) - c)) g(y) dy
// over axis-aligned boxes (dimension 1 or 2). Panels are laid out by the
// caller (breakpoints around the peaks); each panel is bisected until the
// 16-point rule agrees with its two halves.

#include "smoothsqp/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace smoothsqp {

struct GaussLegendre16 {
  std::array<double, 16> nodes{};    // on [-1, 1]
  std::array<double, 16> weights{};

  static const GaussLegendre16& get() {
    static const GaussLegendre16 rule = build();
    return rule;
  }

 private:
  static GaussLegendre16 build() {
    GaussLegendre16 r;
    constexpr int n = 16;
    for (int i = 0; i < n; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      r.nodes[i] = x;
      r.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
  }
};

struct BoltzmannSum {
  double mass = 0.0;
  Vector moment;
  double error = 0.0;  // accumulated |coarse - fine| on accepted panels

  void add(const BoltzmannSum& o) {
    mass += o.mass;
    if (moment.size() == 0)
      moment = o.moment;
    else if (o.moment.size() > 0)
      moment += o.moment;
    error += o.error;
  }
};

/// Integrand sample at y: value f(y) and the moment vector g(y) (may be empty).
using BoltzmannIntegrand = std::function<void(const Vector& y, double& f, Vector& g)>;

struct AdaptiveOptions {
  int max_depth = 12;
  double tol = 1e-10;
  bool with_moment = true;
};

namespace detail {

class BoltzmannIntegrator {
 public:
  BoltzmannIntegrator(const BoltzmannIntegrand& fn, double rho, double shift, Index moment_dim,
                      const AdaptiveOptions& opts)
      : fn_(fn), rho_(rho), shift_(shift), k_(moment_dim), opts_(opts) {}

  // Composite rule over the tensor grid of breakpoints.
  BoltzmannSum integrate(const std::vector<std::vector<double>>& breaks) {
    const std::size_t m = breaks.size();
    std::vector<Box> boxes;
    if (m == 1) {
      for (std::size_t i = 0; i + 1 < breaks[0].size(); ++i)
        boxes.push_back({{breaks[0][i], 0.0}, {breaks[0][i + 1], 0.0}});
    } else {
      for (std::size_t i = 0; i + 1 < breaks[0].size(); ++i)
        for (std::size_t j = 0; j + 1 < breaks[1].size(); ++j)
          boxes.push_back({{breaks[0][i], breaks[1][j]}, {breaks[0][i + 1], breaks[1][j + 1]}});
    }
    m_ = static_cast<Index>(m);
    std::vector<BoltzmannSum> coarse;
    coarse.reserve(boxes.size());
    ref_mass_ = 0.0;
    Vector ref_moment = Vector::Zero(k_);
    for (const auto& b : boxes) {
      coarse.push_back(rule(b));
      ref_mass_ += coarse.back().mass;
      if (opts_.with_moment) ref_moment += coarse.back().moment;
    }
    ref_moment_norm_ = ref_moment.norm();
    BoltzmannSum total;
    total.moment = Vector::Zero(k_);
    exhausted_ = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) total.add(refine(boxes[i], coarse[i], 0));
    if (exhausted_)
      throw QuadratureError("quadrature refinement budget exhausted", total.mass, total.error);
    return total;
  }

  long evaluations() const { return evals_; }

 private:
  struct Box {
    std::array<double, 2> lo, hi;
  };

  BoltzmannSum rule(const Box& b) {
    const auto& gl = GaussLegendre16::get();
    BoltzmannSum s;
    s.moment = Vector::Zero(k_);
    Vector y(m_);
    Vector g;
    double f = 0.0;
    const double h0 = 0.5 * (b.hi[0] - b.lo[0]), c0 = 0.5 * (b.hi[0] + b.lo[0]);
    const double h1 = m_ > 1 ? 0.5 * (b.hi[1] - b.lo[1]) : 1.0, c1 = m_ > 1 ? 0.5 * (b.hi[1] + b.lo[1]) : 0.0;
    const int n1 = m_ > 1 ? 16 : 1;
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < n1; ++j) {
        y[0] = c0 + h0 * gl.nodes[i];
        double w = h0 * gl.weights[i];
        if (m_ > 1) {
          y[1] = c1 + h1 * gl.nodes[j];
          w *= h1 * gl.weights[j];
        }
        fn_(y, f, g);
        ++evals_;
        if (!std::isfinite(f)) throw EvaluationError("lower-level objective", "non-finite value in quadrature");
        const double e = std::exp(-rho_ * (f - shift_));
        if (!std::isfinite(e)) throw QuadratureError("Boltzmann weight overflow (shift too large)", e, 0.0);
        s.mass += w * e;
        if (opts_.with_moment && k_ > 0) s.moment += (w * e) * g;
      }
    }
    return s;
  }

  BoltzmannSum refine(const Box& b, const BoltzmannSum& whole, int depth) {
    std::vector<Box> kids;
    const double mid0 = 0.5 * (b.lo[0] + b.hi[0]);
    if (m_ == 1) {
      kids.push_back({{b.lo[0], 0.0}, {mid0, 0.0}});
      kids.push_back({{mid0, 0.0}, {b.hi[0], 0.0}});
    } else {
      const double mid1 = 0.5 * (b.lo[1] + b.hi[1]);
      kids.push_back({{b.lo[0], b.lo[1]}, {mid0, mid1}});
      kids.push_back({{mid0, b.lo[1]}, {b.hi[0], mid1}});
      kids.push_back({{b.lo[0], mid1}, {mid0, b.hi[1]}});
      kids.push_back({{mid0, mid1}, {b.hi[0], b.hi[1]}});
    }
    std::vector<BoltzmannSum> parts;
    BoltzmannSum fine;
    fine.moment = Vector::Zero(k_);
    for (const auto& kb : kids) {
      parts.push_back(rule(kb));
      fine.add(parts.back());
    }
    const double err_mass = std::abs(fine.mass - whole.mass);
    const double err_moment = opts_.with_moment && k_ > 0 ? (fine.moment - whole.moment).norm() : 0.0;
    const bool ok = err_mass <= opts_.tol * ref_mass_ && err_moment <= opts_.tol * (ref_moment_norm_ + ref_mass_);
    if (ok) {
      fine.error = err_mass;
      return fine;
    }
    if (depth + 1 >= opts_.max_depth) {
      exhausted_ = true;
      fine.error = err_mass;
      return fine;
    }
    BoltzmannSum out;
    out.moment = Vector::Zero(k_);
    for (std::size_t i = 0; i < kids.size(); ++i) out.add(refine(kids[i], parts[i], depth + 1));
    return out;
  }

  const BoltzmannIntegrand& fn_;
  double rho_, shift_;
  Index k_;
  AdaptiveOptions opts_;
  Index m_ = 1;
  double ref_mass_ = 0.0, ref_moment_norm_ = 0.0;
  bool exhausted_ = false;
  long evals_ = 0;
};

}  // namespace detail

/// Breakpoints on [a, b]: uniform panels plus geometric ladders
/// p +- h0 2^k around each peak location p with its own h0.
inline std::vector<double> peak_breakpoints(double a, double b, int uniform_panels,
                                            const std::vector<std::pair<double, double>>& peaks) {
  std::vector<double> pts;
  const double width = b - a;
  for (int i = 0; i <= uniform_panels; ++i) pts.push_back(a + width * i / uniform_panels);
  for (const auto& [p, h0] : peaks) {
    if (!(h0 > 0.0) || !std::isfinite(h0)) continue;
    pts.push_back(std::clamp(p, a, b));
    for (double h = h0; h < width; h *= 2.0) {
      if (p - h > a && p - h < b) pts.push_back(p - h);
      if (p + h > a && p + h < b) pts.push_back(p + h);
    }
  }
  std::sort(pts.begin(), pts.end());
  std::vector<double> out;
  for (double v : pts)
    if (out.empty() || v - out.back() > 1e-14 * std::max(1.0, width)) out.push_back(v);
  out.back() = b;
  out.front() = a;
  return out;
}

}  // namespace smoothsqp
