#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nsfde {

// Numerical quadrature failed to reach the requested tolerance.
class QuadratureError : public std::runtime_error {
 public:
  explicit QuadratureError(const std::string& what) : std::runtime_error(what) {}
};

// Matrix factorization failed (e.g. covariance not numerically PSD even
// after the permitted jitter retry).
class FactorizationError : public std::runtime_error {
 public:
  explicit FactorizationError(const std::string& what) : std::runtime_error(what) {}
};

// An iteration (fixed point, steering loop) did not converge within its
// budget.  Carries the residual history for diagnosis.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> residuals)
      : std::runtime_error(what), residual_history(std::move(residuals)) {}
  std::vector<double> residual_history;
};

// A configured scenario violates one of the standing model hypotheses.
// `violations` lists every failed condition, each tagged with the
// hypothesis label it falls under.
class HypothesisViolation : public std::invalid_argument {
 public:
  explicit HypothesisViolation(std::vector<std::string> items)
      : std::invalid_argument(join(items)), violations(std::move(items)) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string s = "scenario violates model hypotheses:";
    for (const auto& it : items) {
      s += "\n  - ";
      s += it;
    }
    return s;
  }
};

}  // namespace nsfde
