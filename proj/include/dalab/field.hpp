#pragma once

#include "dalab/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace dalab {

/// Cell-centered uniform grid on the square [0, length] x [0, length].
/// Cells are numbered x-fastest: index = i + nx * j.
struct Grid2D {
  int nx = 0;
  int ny = 0;
  double length = 0.0;

  Grid2D() = default;
  Grid2D(int nx_, int ny_, double length_) : nx(nx_), ny(ny_), length(length_) {
    require(nx >= 2 && ny >= 2, "Grid2D: need at least 2 cells per axis");
    require(length > 0.0 && std::isfinite(length), "Grid2D: length must be positive");
  }

  double dx() const { return length / nx; }
  double dy() const { return length / ny; }
  double cell_area() const { return dx() * dy(); }
  Eigen::Index cell_count() const { return Eigen::Index(nx) * ny; }
  Eigen::Index index(int i, int j) const { return i + Eigen::Index(nx) * j; }
  double x_center(int i) const { return (i + 0.5) * dx(); }
  double y_center(int j) const { return (j + 0.5) * dy(); }

  /// Cell containing a point strictly inside the domain.
  Eigen::Index locate(double x, double y) const {
    require(x > 0.0 && x < length && y > 0.0 && y < length,
            "Grid2D::locate: point outside the domain");
    int i = std::min(nx - 1, static_cast<int>(x / dx()));
    int j = std::min(ny - 1, static_cast<int>(y / dy()));
    return index(i, j);
  }

  bool operator==(const Grid2D&) const = default;
};

/// A scalar value per cell.
class Field {
public:
  Field() = default;
  explicit Field(const Grid2D& grid, double value = 0.0)
      : grid_(grid), values_(Vector::Constant(grid.cell_count(), value)) {}
  Field(const Grid2D& grid, Vector values) : grid_(grid), values_(std::move(values)) {
    require(values_.size() == grid_.cell_count(), "Field: value count must equal nx*ny");
  }

  const Grid2D& grid() const { return grid_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  double operator[](Eigen::Index k) const { return values_[k]; }
  double& operator[](Eigen::Index k) { return values_[k]; }
  double at(int i, int j) const { return values_[grid_.index(i, j)]; }

  double mean() const { return values_.mean(); }
  bool all_finite() const { return values_.allFinite(); }

  /// Cell-area-weighted L2(D) norm.
  double l2_norm() const { return std::sqrt(grid_.cell_area() * values_.squaredNorm()); }

  bool operator==(const Field& other) const {
    return grid_ == other.grid_ && values_ == other.values_;
  }

private:
  Grid2D grid_;
  Vector values_;
};

/// Neumann-Laplacian eigenpairs on the cell-centered grid: cosine modes
/// cos(i pi x / L) cos(j pi y / L), normalized to be orthonormal in the
/// cell-area-weighted L2 inner product. Mode (0,0) is excluded.
class SpectralBasis {
public:
  struct Mode {
    int i = 0;
    int j = 0;
    double eigenvalue = 0.0;  // (pi/L)^2 (i^2 + j^2)
  };

  SpectralBasis() = default;

  explicit SpectralBasis(const Grid2D& grid) : grid_(grid) {
    cos_x_ = cosine_table(grid.nx, grid.length);
    cos_y_ = cosine_table(grid.ny, grid.length);

    modes_.reserve(static_cast<std::size_t>(grid.cell_count() - 1));
    const double k = std::numbers::pi / grid.length;
    for (int i = 0; i < grid.nx; ++i)
      for (int j = 0; j < grid.ny; ++j)
        if (i != 0 || j != 0) modes_.push_back({i, j, k * k * double(i * i + j * j)});
    std::sort(modes_.begin(), modes_.end(), [](const Mode& a, const Mode& b) {
      const int ka = a.i * a.i + a.j * a.j;
      const int kb = b.i * b.i + b.j * b.j;
      if (ka != kb) return ka < kb;
      if (a.i != b.i) return a.i < b.i;
      return a.j < b.j;
    });
  }

  const Grid2D& grid() const { return grid_; }
  Eigen::Index size() const { return Eigen::Index(modes_.size()); }
  const std::vector<Mode>& modes() const { return modes_; }
  const Mode& mode(Eigen::Index k) const { return modes_[static_cast<std::size_t>(k)]; }

  /// Value of basis function (i, j) at cell center (a, b).
  double basis_value(int i, int j, int a, int b) const { return cos_x_(a, i) * cos_y_(b, j); }

  /// Basis function k sampled at cell centers.
  Vector basis_function(Eigen::Index k) const {
    Vector c = Vector::Zero(size());
    c[k] = 1.0;
    return synthesize(c);
  }

  /// Coefficients of (f - mean f) in sorted mode order.
  Vector analyze(const Vector& f) const {
    require(f.size() == grid_.cell_count(), "to_spectral: value count does not match grid");
    Eigen::Map<const Matrix> values(f.data(), grid_.nx, grid_.ny);
    const Matrix coeff = grid_.cell_area() * (cos_x_.transpose() * values * cos_y_);
    Vector out(size());
    for (Eigen::Index k = 0; k < size(); ++k) out[k] = coeff(modes_[k].i, modes_[k].j);
    return out;
  }

  /// Field (zero spatial mean) with the given mode coefficients.
  Vector synthesize(const Vector& c) const {
    require(c.size() == size(), "from_spectral: coefficient count does not match mode count");
    Matrix coeff = Matrix::Zero(grid_.nx, grid_.ny);
    for (Eigen::Index k = 0; k < size(); ++k) coeff(modes_[k].i, modes_[k].j) = c[k];
    Matrix values = cos_x_ * coeff * cos_y_.transpose();
    return Eigen::Map<const Vector>(values.data(), values.size());
  }

private:
  // table(a, i) = s_i cos(i pi x_a / L) with sum_a table(a,i)^2 * h = 1
  static Matrix cosine_table(int n, double length) {
    Matrix t(n, n);
    for (int i = 0; i < n; ++i) {
      const double scale = std::sqrt((i == 0 ? 1.0 : 2.0) / length);
      for (int a = 0; a < n; ++a)
        t(a, i) = scale * std::cos(std::numbers::pi * i * (a + 0.5) / n);
    }
    return t;
  }

  Grid2D grid_;
  std::vector<Mode> modes_;
  Matrix cos_x_;
  Matrix cos_y_;
};

inline Vector to_spectral(const Field& f, const SpectralBasis& basis) {
  require(f.grid() == basis.grid(), "to_spectral: field grid does not match basis grid");
  return basis.analyze(f.values());
}

inline Field from_spectral(const Vector& c, const SpectralBasis& basis) {
  return Field(basis.grid(), basis.synthesize(c));
}

// ---- CSV persistence -------------------------------------------------------
// Layout: a header line "nx,ny,length", the three values, then one cell value
// per line in row-major order (x fastest).

inline void write_field_csv(std::ostream& os, const Field& f) {
  const Grid2D& g = f.grid();
  os << "nx,ny,length\n" << g.nx << ',' << g.ny << ',' << std::setprecision(17) << g.length << '\n';
  for (Eigen::Index k = 0; k < f.values().size(); ++k) os << std::setprecision(17) << f[k] << '\n';
}

inline void write_field_csv(const std::string& path, const Field& f) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_field_csv(os, f);
  if (!os) throw Error("write failed: " + path);
}

inline Field read_field_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("nx,ny,length", 0) != 0)
    throw Error("field csv: missing header");
  if (!std::getline(is, line)) throw Error("field csv: missing grid line");
  std::replace(line.begin(), line.end(), ',', ' ');
  std::istringstream gs(line);
  int nx = 0, ny = 0;
  double length = 0.0;
  if (!(gs >> nx >> ny >> length)) throw Error("field csv: malformed grid line");
  Grid2D grid(nx, ny, length);
  Vector values(grid.cell_count());
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    if (!std::getline(is, line)) throw Error("field csv: truncated value list");
    values[k] = std::stod(line);
  }
  return Field(grid, std::move(values));
}

inline Field read_field_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_field_csv(is);
}

}  // namespace dalab
