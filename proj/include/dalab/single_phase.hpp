#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/schedule.hpp"
#include "dalab/tpfa.hpp"

#include <Eigen/SparseCholesky>

#include <string>
#include <vector>

namespace dalab {

/// Point well; the source is spread uniformly over the containing cell.
/// Rates are in m^3/day, positive for production (fluid withdrawn).
struct WellSpec {
  std::string name;
  double x = 0.0;
  double y = 0.0;
  Schedule rate;
};

struct SinglePhaseConfig {
  double compressibility = 1e-8;  // Pa^-1
  double porosity = 0.2;
  double viscosity = 1e-2;        // Pa s
  double thickness = 10.0;        // m
  double initial_pressure = 3.5e7;  // Pa
  double horizon = 50.0;          // days
  double dt = 5.0;                // days
  std::vector<WellSpec> wells;

  void validate(const Grid2D& grid) const {
    require(compressibility > 0.0, "SinglePhaseConfig: compressibility must be positive");
    require(porosity > 0.0 && porosity < 1.0, "SinglePhaseConfig: porosity must lie in (0,1)");
    require(viscosity > 0.0 && thickness > 0.0, "SinglePhaseConfig: viscosity and thickness must be positive");
    require(dt > 0.0 && horizon > 0.0, "SinglePhaseConfig: dt and horizon must be positive");
    const double steps = horizon / dt;
    require(std::abs(steps - std::round(steps)) <= 1e-9 * std::max(1.0, steps),
            "SinglePhaseConfig: horizon must be a multiple of dt");
    for (const auto& w : wells) {
      require(w.x > 0.0 && w.x < grid.length && w.y > 0.0 && w.y < grid.length,
              "SinglePhaseConfig: well " + w.name + " lies outside the domain");
      require(w.rate.covers(0.0, horizon), "SinglePhaseConfig: schedule of " + w.name + " does not cover [0,T]");
    }
  }
};

/// Observation times (days) and observed locations, listed well-major
/// within each time.
struct MeasurementSchedule {
  std::vector<double> times;
  std::vector<std::pair<double, double>> locations;

  std::size_t size() const { return times.size() * locations.size(); }

  void validate(double horizon) const {
    for (std::size_t k = 0; k < times.size(); ++k) {
      require(times[k] > 0.0 && times[k] <= horizon * (1 + 1e-12), "MeasurementSchedule: time outside (0,T]");
      if (k > 0) require(times[k] > times[k - 1], "MeasurementSchedule: times must increase");
    }
  }
};

inline MeasurementSchedule measure_wells(const std::vector<WellSpec>& wells, std::vector<double> times) {
  MeasurementSchedule s;
  s.times = std::move(times);
  for (const auto& w : wells) s.locations.emplace_back(w.x, w.y);
  return s;
}

struct PressureTrajectory {
  Grid2D grid;
  std::vector<double> times;  // days
  std::vector<Vector> pressure;
};

/// Backward-Euler stepper for c phi dp/dt - div(e^u / mu grad p) = sources
/// with no-flow boundaries. The system matrix is factorized once per
/// (u, dt) and reused for every step.
class SinglePhaseStepper {
public:
  SinglePhaseStepper(const Field& log_perm, const SinglePhaseConfig& cfg)
      : grid_(log_perm.grid()), cfg_(&cfg), solver_(stencil_ordering(log_perm.grid())) {
    require(log_perm.all_finite(), "single-phase simulate: log-permeability must be finite");
    faces_ = tpfa_faces(log_perm, cfg.thickness);
    for (auto& f : faces_) f.transmissibility /= cfg.viscosity;

    for (const auto& w : cfg.wells) well_cells_.push_back(grid_.locate(w.x, w.y));

    const double volume = grid_.cell_area() * cfg.thickness;
    accumulation_ = cfg.compressibility * cfg.porosity * volume / (cfg.dt * seconds_per_day);

    std::vector<Triplet> trip;
    trip.reserve(4 * faces_.size() + std::size_t(grid_.cell_count()));
    for (Eigen::Index k = 0; k < grid_.cell_count(); ++k) trip.emplace_back(k, k, accumulation_);
    add_flux_operator(trip, faces_, [](const Face&) { return 1.0; });
    if (!solver_.compute(trip, grid_.cell_count())) throw SolverError("single-phase: factorization failed", 0);
  }

  const Grid2D& grid() const { return grid_; }
  const std::vector<Eigen::Index>& well_cells() const { return well_cells_; }

  /// Volumetric source (m^3/s) per cell over the step starting at t (days).
  Vector sources(double t) const {
    Vector q = Vector::Zero(grid_.cell_count());
    const double mid = t + 0.5 * cfg_->dt;
    for (std::size_t l = 0; l < cfg_->wells.size(); ++l)
      q[well_cells_[l]] -= cfg_->wells[l].rate.value_at(mid) / seconds_per_day;
    return q;
  }

  /// One backward-Euler step of length dt from time t.
  Vector step(const Vector& p, double t, std::ptrdiff_t step_index = -1) const {
    Vector rhs = sources(t);
    for (const Face& f : faces_) {
      const double flux = f.transmissibility * (p[f.left] - p[f.right]);
      rhs[f.left] -= flux;
      rhs[f.right] += flux;
    }
    Vector dp = solver_.solve(rhs);
    if (!solver_.ok() || !dp.allFinite())
      throw SolverError("single-phase: linear solve failed", step_index);
    return p + dp;
  }

  /// Steps from t0 to t1 (both on the dt grid).
  Vector advance(Vector p, double t0, double t1) const {
    const long n0 = std::lround(t0 / cfg_->dt);
    const long n1 = std::lround(t1 / cfg_->dt);
    for (long n = n0; n < n1; ++n) p = step(p, n * cfg_->dt, n);
    return p;
  }

  /// c phi V / dt: the per-cell accumulation coefficient (m^3/Pa/s).
  double accumulation() const { return accumulation_; }

private:
  Grid2D grid_;
  const SinglePhaseConfig* cfg_;
  std::vector<Face> faces_;
  std::vector<Eigen::Index> well_cells_;
  double accumulation_ = 0.0;
  OrderedLdlt solver_;
};

/// Pressure at every step of [0, T].
inline PressureTrajectory simulate(const Field& log_perm, const SinglePhaseConfig& cfg) {
  cfg.validate(log_perm.grid());
  SinglePhaseStepper stepper(log_perm, cfg);
  PressureTrajectory traj;
  traj.grid = log_perm.grid();
  const long steps = std::lround(cfg.horizon / cfg.dt);
  traj.times.reserve(std::size_t(steps + 1));
  traj.pressure.reserve(std::size_t(steps + 1));
  Vector p = Vector::Constant(log_perm.grid().cell_count(), cfg.initial_pressure);
  traj.times.push_back(0.0);
  traj.pressure.push_back(p);
  for (long n = 0; n < steps; ++n) {
    p = stepper.step(p, n * cfg.dt, n);
    traj.times.push_back((n + 1) * cfg.dt);
    traj.pressure.push_back(p);
  }
  return traj;
}

/// Stacks well-cell pressures time-major, then location-major.
inline Vector measure(const PressureTrajectory& traj, const MeasurementSchedule& sched) {
  std::vector<Eigen::Index> cells;
  for (const auto& [x, y] : sched.locations) cells.push_back(traj.grid.locate(x, y));
  Vector out(Eigen::Index(sched.size()));
  Eigen::Index k = 0;
  for (double t : sched.times) {
    const auto idx = find_step(traj.times, t);
    if (idx < 0) throw InvalidArgument("measure: time " + std::to_string(t) + " is not a solver step");
    for (auto c : cells) out[k++] = traj.pressure[std::size_t(idx)][c];
  }
  return out;
}

inline Vector forward_G(const Field& log_perm, const SinglePhaseConfig& cfg,
                        const MeasurementSchedule& sched) {
  return measure(simulate(log_perm, cfg), sched);
}

/// Central finite-difference Jacobian of g at x. Column k is taken along
/// directions.col(k), or along the k-th unit vector when directions is empty.
template <class Fn>
Matrix jacobian_fd(Fn&& g, const Vector& x, double h, const Matrix& directions = Matrix()) {
  require(h > 0.0, "jacobian_fd: step must be positive");
  const bool unit = directions.size() == 0;
  const Eigen::Index cols = unit ? x.size() : directions.cols();
  Matrix jac;
  for (Eigen::Index k = 0; k < cols; ++k) {
    Vector plus = x, minus = x;
    if (unit) {
      plus[k] += h;
      minus[k] -= h;
    } else {
      plus += h * directions.col(k);
      minus -= h * directions.col(k);
    }
    const Vector col = (g(plus) - g(minus)) / (2.0 * h);
    if (k == 0) jac.resize(col.size(), cols);
    jac.col(k) = col;
  }
  return jac;
}

/// Jacobian of the single-phase forward operator with respect to cell values.
inline Matrix jacobian_fd(const Field& log_perm, const SinglePhaseConfig& cfg,
                          const MeasurementSchedule& sched, double h) {
  const Grid2D& grid = log_perm.grid();
  return jacobian_fd([&](const Vector& v) { return forward_G(Field(grid, v), cfg, sched); },
                     log_perm.values(), h);
}

}  // namespace dalab
