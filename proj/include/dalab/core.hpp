#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dalab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double seconds_per_day = 86400.0;
inline constexpr double days_per_year = 365.25;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate a documented precondition.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A linear solve or factorization failed inside a simulator or filter.
class SolverError : public Error {
public:
  SolverError(const std::string& what, std::ptrdiff_t step = -1)
      : Error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what),
        step_(step) {}

  std::ptrdiff_t step() const noexcept { return step_; }

private:
  std::ptrdiff_t step_;
};

/// An iterative method failed to make progress.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace dalab
