#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace dalm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Block structure of an argument does not match the problem.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// An evaluator produced NaN or Inf. `agent()` is empty for the coupling terms.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::optional<std::size_t> agent)
      : Error(what), agent_(agent) {}

  std::optional<std::size_t> agent() const noexcept { return agent_; }

 private:
  std::optional<std::size_t> agent_;
};

/// A documented precondition of an operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or missing configuration input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An oracle declined to run (problem too large, empty feasible band, ...).
class RefusalError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver hit its iteration cap above tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, Vec best, double residual)
      : Error(what), best_(std::move(best)), residual_(residual) {}

  const Vec& best_iterate() const noexcept { return best_; }
  double residual() const noexcept { return residual_; }

 private:
  Vec best_;
  double residual_;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) {
  return m.allFinite();
}

inline double sqr(double x) { return x * x; }

}  // namespace dalm
