#include "smoothsqp/quadrature.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace smoothsqp;
using Catch::Approx;

namespace {

BoltzmannSum integrate_1d(const BoltzmannIntegrand& fn, double rho, double shift, Index k,
                          const std::vector<double>& breaks, AdaptiveOptions opts = {}) {
  detail::BoltzmannIntegrator integ(fn, rho, shift, k, opts);
  return integ.integrate({breaks});
}

// int_a^b exp(-rho (y - c)^2 / 2) dy
double gaussian_mass(double rho, double c, double a, double b) {
  const double s = std::sqrt(rho / 2.0);
  return std::sqrt(std::numbers::pi / (2.0 * rho)) * (std::erf(s * (b - c)) - std::erf(s * (a - c)));
}

}  // namespace

TEST_CASE("16-point Gauss-Legendre rule", "[quadrature]") {
  const auto& gl = GaussLegendre16::get();
  double wsum = 0.0;
  for (int i = 0; i < 16; ++i) {
    wsum += gl.weights[i];
    CHECK(std::abs(gl.nodes[i]) < 1.0);
    CHECK(gl.nodes[i] == Approx(-gl.nodes[15 - i]).margin(1e-15));
  }
  CHECK(wsum == Approx(2.0).epsilon(1e-14));
  // exact through degree 31
  for (int p : {2, 10, 20, 30}) {
    double s = 0.0;
    for (int i = 0; i < 16; ++i) s += gl.weights[i] * std::pow(gl.nodes[i], p);
    CHECK(s == Approx(2.0 / (p + 1)).epsilon(1e-13));
  }
  double s32 = 0.0;
  for (int i = 0; i < 16; ++i) s32 += gl.weights[i] * std::pow(gl.nodes[i], 32);
  CHECK(std::abs(s32 - 2.0 / 33.0) > 1e-12);
}

TEST_CASE("breakpoints cover the interval and ladder around peaks", "[quadrature]") {
  const auto b = peak_breakpoints(-2.0, 2.0, 4, {{0.3, 1e-3}, {5.0, 0.1}});
  REQUIRE(b.front() == -2.0);
  REQUIRE(b.back() == 2.0);
  for (std::size_t i = 1; i < b.size(); ++i) CHECK(b[i] > b[i - 1]);
  auto has = [&](double v) {
    for (double e : b)
      if (std::abs(e - v) < 1e-15) return true;
    return false;
  };
  CHECK(has(0.3));
  CHECK(has(0.3 - 1e-3));
  CHECK(has(0.3 + 1e-3));
  CHECK(has(0.3 + 1.024));
  CHECK(has(-1.0));
  CHECK(has(1.0));
  // a peak outside the interval contributes its clamped position only
  CHECK(has(2.0));
  const auto plain = peak_breakpoints(0.0, 1.0, 3, {});
  REQUIRE(plain.size() == 4);
}

TEST_CASE("sharp Gaussian against the erf closed form", "[quadrature]") {
  const double c = 0.3;
  for (double rho : {1.0, 1e2, 1e6, 1e10}) {
    const double h0 = 1.0 / (std::sqrt(rho) + 0.25);
    const auto breaks = peak_breakpoints(-2.0, 2.0, 13, {{c, h0}});
    BoltzmannIntegrand fn = [c](const Vector& y, double& f, Vector& g) {
      f = 0.5 * (y[0] - c) * (y[0] - c);
      g = Vector::Constant(1, y[0]);
    };
    const auto s = integrate_1d(fn, rho, 0.0, 1, breaks);
    const double exact = gaussian_mass(rho, c, -2.0, 2.0);
    CHECK(s.mass == Approx(exact).epsilon(1e-10));
    // first moment: c * mass + (exp(-rho (a-c)^2/2) - exp(-rho (b-c)^2/2)) / rho
    const double m1 = c * exact + (std::exp(-0.5 * rho * 2.3 * 2.3) - std::exp(-0.5 * rho * 1.7 * 1.7)) / rho;
    CHECK(s.moment[0] == Approx(m1).epsilon(1e-9));
  }
}

TEST_CASE("boundary peak of a linear exponent", "[quadrature]") {
  for (double rho : {1.0, 1e3, 1e8}) {
    const auto breaks = peak_breakpoints(0.0, 1.0, 13, {{0.0, 1.0 / (rho + 1.0)}});
    BoltzmannIntegrand fn = [](const Vector& y, double& f, Vector&) { f = y[0]; };
    AdaptiveOptions opts;
    opts.with_moment = false;
    const auto s = integrate_1d(fn, rho, 0.0, 0, breaks, opts);
    CHECK(s.mass == Approx(-std::expm1(-rho) / rho).epsilon(1e-10));
  }
}

TEST_CASE("tensor-product rule on a 2-D Gaussian", "[quadrature]") {
  const double rho = 400.0;
  BoltzmannIntegrand fn = [](const Vector& y, double& f, Vector& g) {
    f = 0.5 * (y[0] - 0.5) * (y[0] - 0.5) + 0.5 * (y[1] + 0.25) * (y[1] + 0.25);
    g = Vector::Constant(1, 1.0);
  };
  const double h0 = 1.0 / std::sqrt(rho);
  std::vector<std::vector<double>> breaks = {peak_breakpoints(-1.0, 2.0, 4, {{0.5, h0}}),
                                             peak_breakpoints(-1.0, 1.0, 4, {{-0.25, h0}})};
  detail::BoltzmannIntegrator integ(fn, rho, 0.0, 1, AdaptiveOptions{});
  const auto s = integ.integrate(breaks);
  const double exact = gaussian_mass(rho, 0.5, -1.0, 2.0) * gaussian_mass(rho, -0.25, -1.0, 1.0);
  CHECK(s.mass == Approx(exact).epsilon(1e-10));
  CHECK(s.moment[0] == Approx(exact).epsilon(1e-10));
  CHECK(integ.evaluations() > 0);
}

TEST_CASE("exhausted refinement budget is reported", "[quadrature]") {
  BoltzmannIntegrand fn = [](const Vector& y, double& f, Vector&) { f = 0.5 * (y[0] - 0.123) * (y[0] - 0.123); };
  AdaptiveOptions opts;
  opts.max_depth = 2;
  opts.with_moment = false;
  try {
    integrate_1d(fn, 1e8, 0.0, 0, {-1.0, 1.0}, opts);
    FAIL("expected QuadratureError");
  } catch (const QuadratureError& e) {
    CHECK(e.error_bound() > 0.0);
    CHECK(std::isfinite(e.estimate()));
  }
}

TEST_CASE("non-finite integrand values are rejected", "[quadrature]") {
  BoltzmannIntegrand fn = [](const Vector& y, double& f, Vector&) { f = y[0] > 0.5 ? std::nan("") : 0.0; };
  AdaptiveOptions opts;
  opts.with_moment = false;
  CHECK_THROWS_AS(integrate_1d(fn, 1.0, 0.0, 0, {0.0, 1.0}, opts), EvaluationError);
}
