#include "smoothsqp/bilevel.hpp"
#include "smoothsqp/registry.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <thread>

using namespace smoothsqp;
using Catch::Approx;
using problems::vec;

namespace {

BilevelProblem one_dim(std::string name, std::function<double(double, double)> f,
                       std::function<double(double, double)> fx, std::function<double(double, double)> fy,
                       std::function<double(double, double)> fyx, std::function<double(double, double)> fyy,
                       double a, double b) {
  BilevelProblem bp;
  bp.name = std::move(name);
  bp.n = 1;
  bp.m = 1;
  bp.F = [](const Vector& x, const Vector& y) { return x[0] * x[0] + y[0] * y[0]; };
  bp.grad_F = [](const Vector& x, const Vector& y) { return vec({2.0 * x[0], 2.0 * y[0]}); };
  bp.f = [f](const Vector& x, const Vector& y) { return f(x[0], y[0]); };
  bp.grad_f = [fx, fy](const Vector& x, const Vector& y) { return vec({fx(x[0], y[0]), fy(x[0], y[0])}); };
  bp.grad_grad_y_f = [fyx, fyy](const Vector& x, const Vector& y) {
    Matrix J(1, 2);
    J << fyx(x[0], y[0]), fyy(x[0], y[0]);
    return J;
  };
  bp.y_lower = vec({a});
  bp.y_upper = vec({b});
  return bp;
}

BilevelProblem constant_zero(double b) {
  auto z = [](double, double) { return 0.0; };
  return one_dim("zero", z, z, z, z, z, 0.0, b);
}

BilevelProblem bilinear() {
  return one_dim(
      "xy", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; }, [](double, double) { return 1.0; }, [](double, double) { return 0.0; },
      -1.0, 1.0);
}

// f = (y0 - x0)^2 / 2 + (y1 - x1)^2 on [-1, 2] x [-1, 1]
BilevelProblem separable_gaussian() {
  BilevelProblem bp;
  bp.name = "gauss2";
  bp.n = 2;
  bp.m = 2;
  bp.F = [](const Vector& x, const Vector& y) { return x.squaredNorm() + y.squaredNorm(); };
  bp.grad_F = [](const Vector& x, const Vector& y) {
    Vector g(4);
    g << 2.0 * x, 2.0 * y;
    return g;
  };
  bp.f = [](const Vector& x, const Vector& y) {
    return 0.5 * (y[0] - x[0]) * (y[0] - x[0]) + (y[1] - x[1]) * (y[1] - x[1]);
  };
  bp.grad_f = [](const Vector& x, const Vector& y) {
    return vec({-(y[0] - x[0]), -2.0 * (y[1] - x[1]), y[0] - x[0], 2.0 * (y[1] - x[1])});
  };
  bp.grad_grad_y_f = [](const Vector&, const Vector&) {
    Matrix J(2, 4);
    J << -1.0, 0.0, 1.0, 0.0, 0.0, -2.0, 0.0, 2.0;
    return J;
  };
  bp.y_lower = vec({-1.0, -1.0});
  bp.y_upper = vec({2.0, 1.0});
  return bp;
}

// int_a^b exp(-k (y - c)^2 / 2) dy and its derivative in c
double gauss_mass(double k, double c, double a, double b) {
  const double s = std::sqrt(k / 2.0);
  return std::sqrt(std::numbers::pi / (2.0 * k)) * (std::erf(s * (b - c)) - std::erf(s * (a - c)));
}
double gauss_mass_dc(double k, double c, double a, double b) {
  return std::exp(-0.5 * k * (a - c) * (a - c)) - std::exp(-0.5 * k * (b - c) * (b - c));
}

// Dense brute-force minimum of f(x, .) over [a, b]; no polishing.
std::pair<double, double> brute_min(const BilevelProblem& bp, double x, int points) {
  double best = std::numeric_limits<double>::infinity(), arg = 0.0;
  for (int i = 0; i < points; ++i) {
    const double y = bp.y_lower[0] + (bp.y_upper[0] - bp.y_lower[0]) * i / (points - 1);
    const double v = bp.f(vec({x}), vec({y}));
    if (v < best) {
      best = v;
      arg = y;
    }
  }
  return {best, arg};
}

// Central difference of gamma with a step below the smoothing scale 1/rho.
Vector fd_gamma(const BilevelProblem& bp, const Vector& x, double rho, const QuadratureConfig& qc = {}) {
  const double h = 1e-3 / rho;
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (gamma(bp, xp, rho, qc) - gamma(bp, xm, rho, qc)) / (2.0 * h);
  }
  return g;
}

bool fd_agrees(const Vector& analytic, const Vector& fd) {
  return (analytic - fd).cwiseAbs().maxCoeff() <= std::max(1e-6, 1e-4 * analytic.norm());
}

}  // namespace

TEST_CASE("bilevel problem validation", "[bilevel]") {
  auto bp = bilinear();
  CHECK_NOTHROW(bp.validate());
  auto bad = bp;
  bad.y_upper = vec({-1.0});
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = bp;
  bad.f = nullptr;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = bp;
  bad.m = 3;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  CHECK_THROWS_AS(value_function_oracle(bp, vec({0.0}), 1), DomainError);
  CHECK_THROWS_AS(value_function_oracle(bp, vec({0.0, 1.0}), 10), DomainError);
}

TEST_CASE("value function oracle", "[bilevel][oracle]") {
  SECTION("interior exact minimum") {
    auto bp = one_dim(
        "sq", [](double x, double y) { return (y - x) * (y - x); }, [](double x, double y) { return -2.0 * (y - x); },
        [](double x, double y) { return 2.0 * (y - x); }, [](double, double) { return -2.0; },
        [](double, double) { return 2.0; }, -2.0, 2.0);
    const auto r = value_function_oracle(bp, vec({0.5}), 7);
    CHECK(r.value == Approx(0.0).margin(1e-20));
    CHECK(r.argmin[0] == Approx(0.5).margin(1e-12));
  }
  SECTION("cubic lower level: interior minimum ties the boundary") {
    const auto bp = problems::cubic_linear();
    const auto r = value_function_oracle(bp, vec({0.25}), 201);
    CHECK(r.value == Approx(-1.0 / 12.0).epsilon(1e-14));
    CHECK(r.argmin[0] == Approx(0.5).margin(1e-9));
    // the boundary point y = -1 attains the same value
    bool boundary = false;
    for (const auto& mn : r.minima)
      boundary = boundary || (std::abs(mn.y[0] + 1.0) < 1e-12 && std::abs(mn.value + 1.0 / 12.0) < 1e-14);
    CHECK(boundary);
    const auto brute = brute_min(bp, 0.25, 100001);
    CHECK(r.value <= brute.first + 1e-15);
  }
  SECTION("Mirrlees lower level at x = 1 against a dense grid") {
    const auto bp = problems::mirrlees();
    const double yb = problems::mirrlees_y_bar();
    const auto r = value_function_oracle(bp, vec({1.0}), 100000);
    const auto brute = brute_min(bp, 1.0, 100000);
    CHECK(r.value <= brute.first + 1e-15);
    CHECK(r.value >= brute.first - 1e-8);
    CHECK(std::abs(r.argmin[0]) == Approx(yb).margin(1e-6));
    CHECK(std::abs(brute.second) == Approx(yb).margin(1e-4));
    CHECK(r.value == Approx(-(std::exp(-(yb + 1) * (yb + 1)) + std::exp(-(yb - 1) * (yb - 1)))).epsilon(1e-12));
    CHECK(yb == Approx(0.9575).margin(1e-4));
  }
  SECTION("two-dimensional lower level") {
    const auto bp = separable_gaussian();
    const auto r = value_function_oracle(bp, vec({0.3, 2.5}), 41);
    CHECK(r.argmin[0] == Approx(0.3).margin(1e-10));
    CHECK(r.argmin[1] == 1.0);
    CHECK(r.value == Approx(1.5 * 1.5).epsilon(1e-14));
  }
}

TEST_CASE("entropy smoothing of a constant lower level", "[bilevel][gamma]") {
  for (double rho : {1.0, 100.0, 1e6}) {
    CHECK(gamma(constant_zero(1.0), vec({0.3}), rho) == Approx(0.0).margin(1e-15));
    CHECK(gamma(constant_zero(std::numbers::e), vec({0.3}), rho) == Approx(-1.0 / rho).epsilon(1e-12));
    CHECK(grad_gamma(constant_zero(1.0), vec({0.3}), rho)[0] == 0.0);
  }
}

TEST_CASE("entropy smoothing of a bilinear lower level", "[bilevel][gamma]") {
  const auto bp = bilinear();
  CHECK(grad_gamma(bp, vec({0.0}), 10.0)[0] == Approx(0.0).margin(1e-14));
  // int exp(-rho x y) dy = 2 sinh(u) / u with u = rho x; grad = -(coth u - 1/u)
  for (double rho : {1.0, 10.0, 1e3}) {
    for (double x : {0.3, -0.7}) {
      const double u = rho * std::abs(x);
      const double log_mass = u + std::log1p(-std::exp(-2.0 * u)) - std::log(u);
      CHECK(gamma(bp, vec({x}), rho) == Approx(-log_mass / rho).epsilon(1e-10));
      const double langevin = 1.0 / std::tanh(u) - 1.0 / u;
      CHECK(grad_gamma(bp, vec({x}), rho)[0] == Approx(-std::copysign(langevin, x)).epsilon(1e-9));
    }
  }
}

TEST_CASE("entropy smoothing of a separable 2-D Gaussian", "[bilevel][gamma]") {
  const auto bp = separable_gaussian();
  QuadratureConfig qc;
  qc.base_nodes_per_dim = 48;
  for (double rho : {1.0, 50.0, 2000.0}) {
    const Vector x = vec({0.4, 0.9});
    const double m0 = gauss_mass(rho, x[0], -1.0, 2.0), m1 = gauss_mass(2.0 * rho, x[1], -1.0, 1.0);
    const auto ev = entropy_smoothing(bp, x, rho, qc);
    CHECK(ev.gamma == Approx(-std::log(m0 * m1) / rho).epsilon(1e-9));
    const double g0 = -gauss_mass_dc(rho, x[0], -1.0, 2.0) / (rho * m0);
    const double g1 = -gauss_mass_dc(2.0 * rho, x[1], -1.0, 1.0) / (rho * m1);
    CHECK(ev.gradient[0] == Approx(g0).margin(1e-9));
    CHECK(ev.gradient[1] == Approx(g1).margin(1e-9));
  }
}

TEST_CASE("entropy smoothing follows the Laplace asymptotics", "[bilevel][gamma]") {
  // x = 0.6: unique interior minimiser y = sqrt(x), f'' = 2 sqrt(x)
  const auto bp = problems::cubic_linear();
  const double x = 0.6, v = -2.0 / 3.0 * std::pow(x, 1.5), curv = 2.0 * std::sqrt(x);
  for (double rho : {1e4, 1e6, 1e8}) {
    const double g = gamma(bp, vec({x}), rho);
    const double laplace = 0.5 * std::log(rho * curv / (2.0 * std::numbers::pi)) / rho;
    CHECK(std::abs((g - v) - laplace) * rho <= 1e-2 * std::max(1.0, 1e4 / rho));
  }
}

TEST_CASE("entropy smoothing converges to the value function at a tie", "[bilevel][gamma]") {
  const auto bp = problems::cubic_linear();
  const Vector x = vec({0.25});
  const double v = brute_min(bp, 0.25, 100001).first;
  REQUIRE(v == Approx(-1.0 / 12.0).epsilon(1e-9));
  double prev = std::numeric_limits<double>::infinity();
  for (double rho : {1e2, 1e3, 1e4, 1e5}) {
    const double gap = std::abs(gamma(bp, x, rho) - v);
    CHECK(gap < prev);
    prev = gap;
    CHECK(fd_agrees(grad_gamma(bp, x, rho), fd_gamma(bp, x, rho)));
    // int_Y exp(-rho (f - V)) <= |Y| bounds gamma from below
    CHECK(gamma(bp, x, rho) >= v - std::log(2.0) / rho - 1e-15);
  }
  CHECK(prev <= 1e-3);
}

TEST_CASE("grad_gamma matches finite differences on the registry problems", "[bilevel][gamma][fd]") {
  struct Case {
    BilevelProblem bp;
    std::vector<double> xs;
  };
  const std::vector<Case> cases = {{problems::mirrlees(), {0.5, 1.0, 1.3}},
                                   {problems::cubic_linear(), {0.1, 0.25, 0.6}},
                                   {problems::cubic_quadratic(), {0.2, 0.5, 0.8}}};
  for (const auto& c : cases) {
    for (double x : c.xs) {
      for (double rho : {1e2, 1e4, 1e6}) {
        const Vector g = grad_gamma(c.bp, vec({x}), rho);
        const Vector fd = fd_gamma(c.bp, vec({x}), rho);
        INFO(c.bp.name << " x=" << x << " rho=" << rho << " analytic=" << g[0] << " fd=" << fd[0]);
        CHECK(fd_agrees(g, fd));
      }
    }
  }
  // the same audit through the combined program's inequality family
  const auto prob = build_combined_program(problems::mirrlees());
  const auto rep = fd_gradient_check(prob.inequalities[0], vec({0.5, 0.3}), 100.0, 1e-6);
  CHECK(rep.max_abs_error <= 1e-4);
}

TEST_CASE("rho outside the supported range", "[bilevel][gamma]") {
  const auto bp = problems::cubic_linear();
  CHECK_THROWS_AS(gamma(bp, vec({0.3}), 0.0), DomainError);
  CHECK_THROWS_AS(gamma(bp, vec({0.3}), -1.0), DomainError);
  CHECK_THROWS_AS(gamma(bp, vec({0.3}), 1e13), QuadratureError);
  CHECK(std::isfinite(gamma(bp, vec({0.3}), 1e12)));
}

TEST_CASE("combined program wiring", "[bilevel][cp]") {
  SECTION("equality values and gradients at the reference solutions") {
    const auto p14 = build_combined_program(problems::cubic_linear());
    const auto p20 = build_combined_program(problems::cubic_quadratic());
    REQUIRE(p14.n == 2);
    REQUIRE(p14.num_ineq() == 1);
    REQUIRE(p14.num_eq() == 1);
    for (const auto* p : {&p14, &p20}) {
      const Vector z = p == &p14 ? vec({0.25, 0.5}) : vec({0.5, 0.5});
      CHECK(p->equalities[0].value_at(z, 1e3) == 0.0);
      const Vector g = p->equalities[0].gradient_at(z, 1e3);
      CHECK(g[0] == -1.0);
      CHECK(g[1] == 1.0);
    }
    const auto pm = build_combined_program(problems::mirrlees());
    const Vector g = pm.equalities[0].gradient_at(vec({1.0, 0.95759}), 1e3);
    CHECK(g[0] == Approx(0.084814).margin(1e-3));
    CHECK(g[1] == Approx(1.70047).margin(1e-3));
  }
  SECTION("equalities do not depend on rho") {
    const auto p = build_combined_program(problems::mirrlees());
    const Vector z = vec({0.7, -0.4});
    for (double rho : {1.0, 1e3, 1e9}) {
      CHECK(p.equalities[0].value_at(z, rho) == p.equalities[0].value_at(z, 1.0));
      CHECK(p.equalities[0].gradient_at(z, rho) == p.equalities[0].gradient_at(z, 1.0));
    }
  }
  SECTION("inequality is f - gamma with gradient (f_x - grad gamma, f_y)") {
    const auto bp = problems::cubic_quadratic();
    const auto p = build_combined_program(bp);
    const Vector z = vec({0.4, -0.2});
    for (double rho : {1e2, 1e5}) {
      const double g = p.inequalities[0].value_at(z, rho);
      CHECK(g == Approx(bp.f(z.head(1), z.tail(1)) - gamma(bp, z.head(1), rho)).epsilon(1e-14));
      const Vector grad = p.inequalities[0].gradient_at(z, rho);
      CHECK(grad[0] == Approx(bp.grad_f(z.head(1), z.tail(1))[0] - grad_gamma(bp, z.head(1), rho)[0]).epsilon(1e-14));
      CHECK(grad[1] == bp.grad_f(z.head(1), z.tail(1))[1]);
    }
  }
  SECTION("base value uses the grid oracle for V") {
    const auto p = build_combined_program(problems::cubic_linear());
    REQUIRE(p.inequalities[0].has_base());
    CHECK(p.inequalities[0].base_value_at(vec({0.25, 0.5})) == Approx(0.0).margin(1e-14));
    CHECK(p.inequalities[0].base_value_at(vec({0.25, 0.0})) == Approx(1.0 / 12.0).epsilon(1e-12));
  }
  SECTION("the inequality vanishes where f equals gamma") {
    // bisection in y on f(x, y) = gamma(x) to the right of the minimiser
    const auto bp = problems::cubic_linear();
    const auto p = build_combined_program(bp);
    const double x = 0.6, rho = 1e3, gm = gamma(bp, vec({x}), rho);
    double lo = std::sqrt(x), hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (bp.f(vec({x}), vec({mid})) < gm ? lo : hi) = mid;
    }
    CHECK(p.inequalities[0].value_at(vec({x, lo}), rho) == Approx(0.0).margin(1e-14));
  }
  SECTION("at the oracle minimiser the smoothed inequality is at most ln|Y| / rho") {
    for (const auto& bp : {problems::mirrlees(), problems::cubic_linear(), problems::cubic_quadratic()}) {
      const auto p = build_combined_program(bp);
      for (double x : {0.2, 0.7, 1.2}) {
        const auto orc = value_function_oracle(bp, vec({x}), 4001);
        for (double rho : {1e2, 1e4, 1e6}) {
          Vector z(2);
          z << x, orc.argmin[0];
          const double g = p.inequalities[0].value_at(z, rho);
          CHECK(g <= std::log(bp.volume()) / rho + 1e-12);
          CHECK(std::abs(g) <= 2.0 * std::log(rho) / rho);
        }
      }
    }
  }
}

TEST_CASE("memoised evaluation is deterministic under concurrency", "[bilevel][cp]") {
  const auto p = build_combined_program(problems::mirrlees());
  const Vector z = vec({0.9, 0.8});
  const double ref = p.inequalities[0].value_at(z, 1e4);
  const Vector gref = p.inequalities[0].gradient_at(z, 1e4);
  std::vector<double> vals(8);
  std::vector<Vector> grads(8);
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t)
    pool.emplace_back([&, t] {
      const double rho = t % 2 ? 1e4 : 1e5;
      vals[t] = p.inequalities[0].value_at(z, rho);
      grads[t] = p.inequalities[0].gradient_at(z, rho);
    });
  for (auto& th : pool) th.join();
  const double ref5 = gamma(problems::mirrlees(), vec({0.9}), 1e5);
  for (int t = 0; t < 8; ++t) {
    if (t % 2) {
      CHECK(vals[t] == ref);
      CHECK(grads[t] == gref);
    } else {
      CHECK(vals[t] == problems::mirrlees().f(vec({0.9}), vec({0.8})) - ref5);
    }
  }
}

TEST_CASE("interiority diagnostic", "[bilevel]") {
  CHECK(check_interiority(problems::cubic_linear(), vec({0.25}), 0.1));
  CHECK(interiority_margin(problems::cubic_linear(), vec({0.25})) == Approx(0.5).margin(1e-9));
  auto linear = one_dim(
      "y", [](double, double y) { return y; }, [](double, double) { return 0.0; }, [](double, double) { return 1.0; },
      [](double, double) { return 0.0; }, [](double, double) { return 0.0; }, 0.0, 1.0);
  CHECK_FALSE(check_interiority(linear, vec({0.0}), 1e-3));
  CHECK(check_interiority(problems::mirrlees(), vec({1.0}), 0.5));
  // below x = 1/4 the lower-level minimum sits on the face y = -1
  CHECK_FALSE(check_interiority(problems::cubic_linear(), vec({0.2}), 1e-3));
  CHECK_THROWS_AS(check_interiority(linear, vec({0.0}), 0.0), DomainError);
}
