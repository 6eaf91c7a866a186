#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace dalab {

/// Fifth-order piecewise rational compactly supported correlation function
/// with support [0, 2c].
inline double gaspari_cohn(double r, double c) {
  require(r >= 0.0 && c > 0.0, "gaspari_cohn: need r >= 0 and c > 0");
  const double z = r / c;
  if (z >= 2.0) return 0.0;
  const double z2 = z * z, z3 = z2 * z, z4 = z3 * z, z5 = z4 * z;
  if (z <= 1.0) return -0.25 * z5 + 0.5 * z4 + 0.625 * z3 - 5.0 / 3.0 * z2 + 1.0;
  return std::max(0.0, z5 / 12.0 - 0.5 * z4 + 0.625 * z3 + 5.0 / 3.0 * z2 - 5.0 * z + 4.0 - 2.0 / (3.0 * z));
}

struct LocalizationSpec {
  double critical_length = 0.0;
  std::vector<std::pair<double, double>> wells;
  Matrix rho_uw;  // cells x wells
  Matrix rho_ww;  // wells x wells
};

inline LocalizationSpec build_localization(const Grid2D& grid, const std::vector<std::pair<double, double>>& wells,
                                           double c) {
  require(c > 0.0, "build_localization: critical length must be positive");
  LocalizationSpec loc;
  loc.critical_length = c;
  loc.wells = wells;
  const auto nw = Eigen::Index(wells.size());
  loc.rho_uw.resize(grid.cell_count(), nw);
  loc.rho_ww.resize(nw, nw);
  for (Eigen::Index l = 0; l < nw; ++l) {
    const auto [wx, wy] = wells[std::size_t(l)];
    require(wx > 0.0 && wx < grid.length && wy > 0.0 && wy < grid.length, "build_localization: well outside domain");
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i)
        loc.rho_uw(grid.index(i, j), l) = gaspari_cohn(std::hypot(grid.x_center(i) - wx, grid.y_center(j) - wy), c);
    for (Eigen::Index m = 0; m < nw; ++m) {
      const auto [mx, my] = wells[std::size_t(m)];
      loc.rho_ww(l, m) = gaspari_cohn(std::hypot(mx - wx, my - wy), c);
    }
  }
  return loc;
}

}  // namespace dalab
