#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"

#include <cmath>

namespace dalab::harness {

struct RelativeErrors {
  double eps_u = 0.0;
  double eps_sigma = 0.0;
};

/// eps_u = ||u_hat - u_pos|| / ||u_pos - ubar||, eps_sigma = ||var_hat - var_pos|| / ||var_pos||
/// in the cell-area-weighted L2 norm.
inline RelativeErrors relative_errors(const Grid2D& grid, const Vector& mean, const Vector& variance,
                                      const Vector& gold_mean, const Vector& gold_variance, const Vector& prior_mean) {
  const auto n = grid.cell_count();
  require(mean.size() == n && variance.size() == n && gold_mean.size() == n && gold_variance.size() == n &&
              prior_mean.size() == n,
          "relative_errors: fields must live on the same grid");
  const double w = grid.cell_area();
  auto norm = [w](const Vector& v) { return std::sqrt(w * v.squaredNorm()); };
  const double du = norm(gold_mean - prior_mean);
  const double ds = norm(gold_variance);
  if (!(du > 0.0)) throw InvalidArgument("relative_errors: gold mean equals the prior mean");
  if (!(ds > 0.0)) throw InvalidArgument("relative_errors: gold variance is zero");
  return {norm(mean - gold_mean) / du, norm(variance - gold_variance) / ds};
}

}  // namespace dalab::harness
