#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace smoothsqp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A function family returned a non-finite value or gradient.
class EvaluationError : public Error {
 public:
  EvaluationError(std::string family, const std::string& what)
      : Error("evaluation failure in '" + family + "': " + what), family_(std::move(family)) {}
  const std::string& family() const noexcept { return family_; }

 private:
  std::string family_;
};

/// Matrix not symmetric positive definite (or otherwise unusable).
class MatrixError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Quadrature could not reach its tolerance, or rho exceeded the supported cap.
class QuadratureError : public Error {
 public:
  QuadratureError(const std::string& what, double estimate, double error_bound)
      : Error(what), estimate_(estimate), error_bound_(error_bound) {}
  double estimate() const noexcept { return estimate_; }
  double error_bound() const noexcept { return error_bound_; }

 private:
  double estimate_;
  double error_bound_;
};

/// A diagnostic could not produce a verdict from the available data.
class InconclusiveError : public Error {
 public:
  using Error::Error;
};

/// Unknown registry name or malformed run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace smoothsqp
