#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/schedule.hpp"
#include "dalab/tpfa.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace dalab {

/// Quadratic Corey-type relative permeabilities.
struct RelPermModel {
  double a_w = 0.3;
  double a_o = 0.9;
  double s_iw = 0.2;
  double s_or = 0.2;
  double mu_w = 5e-4;  // Pa s
  double mu_o = 1e-2;  // Pa s

  void validate() const {
    require(a_w > 0.0 && a_w <= 1.0 && a_o > 0.0 && a_o <= 1.0, "RelPermModel: a_w, a_o must lie in (0,1]");
    require(s_iw >= 0.0 && s_or >= 0.0 && s_iw + s_or < 1.0, "RelPermModel: need s_iw + s_or < 1");
    require(mu_w > 0.0 && mu_o > 0.0, "RelPermModel: viscosities must be positive");
  }

  double s_min() const { return s_iw; }
  double s_max() const { return 1.0 - s_or; }
  double normalized(double s) const { return (s - s_iw) / (1.0 - s_iw - s_or); }

  double krw(double s) const {
    const double x = normalized(s);
    return a_w * x * x;
  }
  double kro(double s) const {
    const double x = (1.0 - s - s_or) / (1.0 - s_iw - s_or);
    return a_o * x * x;
  }
  double water_mobility(double s) const { return krw(s) / mu_w; }
  double oil_mobility(double s) const { return kro(s) / mu_o; }
  double total_mobility(double s) const { return water_mobility(s) + oil_mobility(s); }
  double fractional_flow(double s) const { return water_mobility(s) / total_mobility(s); }

  /// max_s f_w'(s) over the mobile range, by dense sampling.
  double max_fractional_flow_slope() const {
    constexpr int n = 4000;
    double best = 0.0;
    const double h = (s_max() - s_min()) / n;
    for (int k = 0; k < n; ++k) {
      const double a = s_min() + k * h;
      best = std::max(best, (fractional_flow(a + h) - fractional_flow(a)) / h);
    }
    return best;
  }
};

struct Mobilities {
  double water = 0.0;
  double total = 0.0;
};

/// Water and total mobility at saturation s.
inline Mobilities mobilities(double s, const RelPermModel& rp) {
  const double tol = 1e-12;
  if (!(s >= rp.s_min() - tol && s <= rp.s_max() + tol))
    throw InvalidArgument("mobilities: saturation " + std::to_string(s) + " outside [s_iw, 1-s_or]");
  s = std::clamp(s, rp.s_min(), rp.s_max());
  return {rp.water_mobility(s), rp.total_mobility(s)};
}

/// Rate-controlled water injector; rate in m^3/day.
struct InjectorSpec {
  std::string name;
  double x = 0.0;
  double y = 0.0;
  Schedule rate;
  std::optional<double> well_index;  // overrides the Peaceman index
};

/// Bottom-hole-pressure-controlled producer; BHP in Pa.
struct ProducerSpec {
  std::string name;
  double x = 0.0;
  double y = 0.0;
  Schedule bhp;
  std::optional<double> well_index;
};

struct TwoPhaseConfig {
  double porosity = 0.2;
  double thickness = 10.0;        // m
  double initial_pressure = 2.5e7;  // Pa
  double initial_saturation = 0.2;
  double horizon = 5 * days_per_year;  // days
  double dt = 30.0;               // days, pressure step
  double cfl = 0.9;
  double well_radius = 0.1;       // m
  RelPermModel relperm;
  std::vector<InjectorSpec> injectors;
  std::vector<ProducerSpec> producers;

  std::size_t well_count() const { return injectors.size() + producers.size(); }

  void validate(const Grid2D& grid) const {
    relperm.validate();
    require(porosity > 0.0 && porosity < 1.0, "TwoPhaseConfig: porosity must lie in (0,1)");
    require(thickness > 0.0 && horizon > 0.0 && dt > 0.0, "TwoPhaseConfig: thickness, horizon, dt must be positive");
    require(cfl > 0.0 && cfl <= 1.0, "TwoPhaseConfig: cfl must lie in (0,1]");
    require(well_radius > 0.0 && well_radius < 0.2 * std::min(grid.dx(), grid.dy()),
            "TwoPhaseConfig: well radius must be below the Peaceman radius");
    require(initial_saturation >= relperm.s_min() && initial_saturation <= relperm.s_max(),
            "TwoPhaseConfig: initial saturation outside [s_iw, 1-s_or]");
    auto inside = [&](double x, double y) { return x > 0.0 && x < grid.length && y > 0.0 && y < grid.length; };
    for (const auto& w : injectors) {
      require(inside(w.x, w.y), "TwoPhaseConfig: injector " + w.name + " outside the domain");
      require(w.rate.covers(0.0, horizon), "TwoPhaseConfig: schedule of " + w.name + " does not cover [0,T]");
      require(!w.well_index || *w.well_index > 0.0, "TwoPhaseConfig: well index must be positive");
    }
    for (const auto& w : producers) {
      require(inside(w.x, w.y), "TwoPhaseConfig: producer " + w.name + " outside the domain");
      require(w.bhp.covers(0.0, horizon), "TwoPhaseConfig: schedule of " + w.name + " does not cover [0,T]");
      require(!w.well_index || *w.well_index > 0.0, "TwoPhaseConfig: well index must be positive");
    }
  }
};

/// Well volumes accumulated over a simulation (m^3).
struct WellTotals {
  std::vector<double> injected;        // per injector
  std::vector<double> produced_water;  // per producer
  std::vector<double> produced_oil;    // per producer

  double total_injected() const { double s = 0; for (double v : injected) s += v; return s; }
  double total_produced() const {
    double s = 0;
    for (std::size_t k = 0; k < produced_water.size(); ++k) s += produced_water[k] + produced_oil[k];
    return s;
  }
};

struct TwoPhaseSnapshot {
  double time = 0.0;  // days
  Vector pressure;
  Vector saturation;
  WellTotals totals;
};

struct TwoPhaseTrajectory {
  Grid2D grid;
  std::vector<double> injector_index;  // Peaceman omega per injector (m^3)
  std::vector<double> producer_index;
  std::vector<Eigen::Index> injector_cells;
  std::vector<Eigen::Index> producer_cells;
  std::vector<TwoPhaseSnapshot> snapshots;
  std::size_t saturation_substeps = 0;
};

/// IMPES discretization for a fixed log-permeability: implicit pressure with
/// two-point fluxes (arithmetic face mobility), explicit upwind saturation.
class TwoPhaseSolver {
public:
  TwoPhaseSolver(const Field& log_perm, const TwoPhaseConfig& cfg)
      : grid_(log_perm.grid()), cfg_(&cfg) {
    cfg.validate(grid_);
    require(log_perm.all_finite(), "two-phase: log-permeability must be finite");
    faces_ = tpfa_faces(log_perm, cfg.thickness);
    volume_ = grid_.cell_area() * cfg.thickness;
    fw_slope_ = cfg.relperm.max_fractional_flow_slope();
    const double re = 0.2 * grid_.dx();
    auto peaceman = [&](Eigen::Index cell) {
      return 2.0 * std::numbers::pi * std::exp(log_perm[cell]) * cfg.thickness / std::log(re / cfg.well_radius);
    };
    for (const auto& w : cfg.injectors) {
      injector_cells_.push_back(grid_.locate(w.x, w.y));
      injector_index_.push_back(w.well_index.value_or(peaceman(injector_cells_.back())));
    }
    for (const auto& w : cfg.producers) {
      producer_cells_.push_back(grid_.locate(w.x, w.y));
      producer_index_.push_back(w.well_index.value_or(peaceman(producer_cells_.back())));
    }
  }

  const Grid2D& grid() const { return grid_; }
  const TwoPhaseConfig& config() const { return *cfg_; }
  const std::vector<double>& injector_index() const { return injector_index_; }
  const std::vector<double>& producer_index() const { return producer_index_; }
  const std::vector<Eigen::Index>& injector_cells() const { return injector_cells_; }
  const std::vector<Eigen::Index>& producer_cells() const { return producer_cells_; }
  double cell_volume() const { return volume_; }

  /// Well controls in effect: injector rates (m^3/s) and producer BHPs (Pa).
  struct Controls {
    std::vector<double> rates;
    std::vector<double> bhp;
  };

  Controls controls_at(double t) const {
    Controls c;
    for (const auto& w : cfg_->injectors) c.rates.push_back(w.rate.value_at(t) / seconds_per_day);
    for (const auto& w : cfg_->producers) c.bhp.push_back(w.bhp.value_at(t));
    return c;
  }

  Controls controls_before(double t) const {
    Controls c;
    for (const auto& w : cfg_->injectors) c.rates.push_back(w.rate.value_before(t) / seconds_per_day);
    for (const auto& w : cfg_->producers) c.bhp.push_back(w.bhp.value_before(t));
    return c;
  }

  /// Solves -div(lambda(s) e^u grad p) = injector sources + producer terms.
  Vector solve_pressure(const Vector& s, const Controls& ctl, std::ptrdiff_t step = -1) const {
    const auto n = grid_.cell_count();
    Vector lambda(n);
    for (Eigen::Index k = 0; k < n; ++k) lambda[k] = mobilities(s[k], cfg_->relperm).total;

    std::vector<Triplet> trip;
    trip.reserve(4 * faces_.size() + producer_cells_.size() + 1);
    add_flux_operator(trip, faces_, [&](const Face& f) { return 0.5 * (lambda[f.left] + lambda[f.right]); });
    Vector rhs = Vector::Zero(n);
    double net_injection = 0.0;
    for (std::size_t l = 0; l < injector_cells_.size(); ++l) {
      rhs[injector_cells_[l]] += ctl.rates[l];
      net_injection += ctl.rates[l];
    }
    for (std::size_t l = 0; l < producer_cells_.size(); ++l) {
      const auto c = producer_cells_[l];
      const double coef = producer_index_[l] * lambda[c];
      trip.emplace_back(c, c, coef);
      rhs[c] += coef * ctl.bhp[l];
    }

    const bool anchored = !producer_cells_.empty();
    if (!anchored) {
      const double scale = 1e-12 * (1.0 + std::abs(ctl.rates.empty() ? 0.0 : ctl.rates.front()));
      if (std::abs(net_injection) > scale)
        throw SolverError("two-phase pressure: no producers and nonzero net injection makes the system singular", step);
      // Pure-Neumann problem: drop cell 0's equation, fix p_0, shift to mean p0.
      std::erase_if(trip, [](const Triplet& t) { return t.row() == 0 || t.col() == 0; });
      trip.emplace_back(0, 0, 1.0);
      rhs[0] = 0.0;
    }

    OrderedLdlt solver(stencil_ordering(grid_));
    if (!solver.compute(trip, n)) throw SolverError("two-phase pressure: factorization failed", step);
    Vector p = solver.solve(rhs);
    if (!solver.ok() || !p.allFinite())
      throw SolverError("two-phase pressure: solve failed", step);
    if (!anchored) p.array() += cfg_->initial_pressure - p.mean();
    return p;
  }

  /// Total (both-phase) flux through every face, positive left -> right (m^3/s).
  Vector face_fluxes(const Vector& s, const Vector& p) const {
    Vector flux(Eigen::Index(faces_.size()));
    for (std::size_t k = 0; k < faces_.size(); ++k) {
      const Face& f = faces_[k];
      const double lam = 0.5 * (mobilities(s[f.left], cfg_->relperm).total +
                                mobilities(s[f.right], cfg_->relperm).total);
      flux[Eigen::Index(k)] = f.transmissibility * lam * (p[f.left] - p[f.right]);
    }
    return flux;
  }

  /// Producer total rates omega lambda(s) (P_bh - p) in m^3/s (negative when producing).
  std::vector<double> producer_rates(const Vector& s, const Vector& p, const Controls& ctl) const {
    std::vector<double> q;
    for (std::size_t l = 0; l < producer_cells_.size(); ++l) {
      const auto c = producer_cells_[l];
      q.push_back(producer_index_[l] * mobilities(s[c], cfg_->relperm).total * (ctl.bhp[l] - p[c]));
    }
    return q;
  }

  /// Frozen-velocity transport data for one pressure step.
  struct Transport {
    Vector face_flux;
    std::vector<double> injection;   // m^3/s per injector
    std::vector<double> production;  // total m^3/s per producer (negative = out)
  };

  Transport transport(const Vector& s, const Vector& p, const Controls& ctl) const {
    return {face_fluxes(s, p), ctl.rates, producer_rates(s, p, ctl)};
  }

  /// Largest stable explicit substep (seconds) for the frozen fluxes.
  double max_stable_dt(const Transport& tr) const {
    Vector outflow = Vector::Zero(grid_.cell_count());
    for (std::size_t k = 0; k < faces_.size(); ++k) {
      const double f = tr.face_flux[Eigen::Index(k)];
      if (f > 0) outflow[faces_[k].left] += f;
      else outflow[faces_[k].right] -= f;
    }
    for (std::size_t l = 0; l < producer_cells_.size(); ++l)
      outflow[producer_cells_[l]] += std::max(0.0, -tr.production[l]);
    const double worst = outflow.maxCoeff() * fw_slope_;
    if (worst <= 0.0) return std::numeric_limits<double>::infinity();
    return cfg_->cfl * cfg_->porosity * volume_ / worst;
  }

  /// One explicit upwind saturation update of length dt_seconds. Water
  /// entering through producers follows lambda_w / lambda of the producer cell.
  Vector advance_saturation(const Vector& s, const Transport& tr, double dt_seconds,
                            WellTotals* totals = nullptr, std::ptrdiff_t step = -1) const {
    if (dt_seconds > max_stable_dt(tr) * (1.0 + 1e-12))
      throw SolverError("two-phase saturation: time step violates the CFL bound", step);
    const auto& rp = cfg_->relperm;
    Vector rate = Vector::Zero(grid_.cell_count());  // water volume per second into each cell
    for (std::size_t k = 0; k < faces_.size(); ++k) {
      const Face& f = faces_[k];
      const double flux = tr.face_flux[Eigen::Index(k)];
      const double fw = rp.fractional_flow(std::clamp(flux >= 0 ? s[f.left] : s[f.right], rp.s_min(), rp.s_max()));
      rate[f.left] -= fw * flux;
      rate[f.right] += fw * flux;
    }
    for (std::size_t l = 0; l < injector_cells_.size(); ++l) rate[injector_cells_[l]] += tr.injection[l];
    std::vector<double> prod_water(producer_cells_.size());
    for (std::size_t l = 0; l < producer_cells_.size(); ++l) {
      const auto c = producer_cells_[l];
      prod_water[l] = rp.fractional_flow(std::clamp(s[c], rp.s_min(), rp.s_max())) * tr.production[l];
      rate[c] += prod_water[l];
    }

    Vector next = s + (dt_seconds / (cfg_->porosity * volume_)) * rate;
    constexpr double guard = 1e-9;
    for (Eigen::Index k = 0; k < next.size(); ++k) {
      if (next[k] < rp.s_min() - guard || next[k] > rp.s_max() + guard || !std::isfinite(next[k]))
        throw SolverError("two-phase saturation: value " + std::to_string(next[k]) + " outside bounds", step);
      next[k] = std::clamp(next[k], rp.s_min(), rp.s_max());
    }

    if (totals) {
      for (std::size_t l = 0; l < injector_cells_.size(); ++l) totals->injected[l] += tr.injection[l] * dt_seconds;
      for (std::size_t l = 0; l < producer_cells_.size(); ++l) {
        totals->produced_water[l] -= prod_water[l] * dt_seconds;
        totals->produced_oil[l] -= (tr.production[l] - prod_water[l]) * dt_seconds;
      }
    }
    return next;
  }

  WellTotals zero_totals() const {
    return {std::vector<double>(injector_cells_.size(), 0.0), std::vector<double>(producer_cells_.size(), 0.0),
            std::vector<double>(producer_cells_.size(), 0.0)};
  }

  /// One IMPES pressure step [t, t + dt_days]: pressure solve, then CFL-limited
  /// saturation substeps with frozen velocities. Returns the new saturation.
  Vector step(const Vector& s, double t, double dt_days, WellTotals* totals = nullptr,
              std::size_t* substeps = nullptr, std::ptrdiff_t step_index = -1) const {
    const Controls ctl = controls_at(t + 0.5 * dt_days);
    const Vector p = solve_pressure(s, ctl, step_index);
    const Transport tr = transport(s, p, ctl);
    const double total = dt_days * seconds_per_day;
    const double stable = max_stable_dt(tr);
    const long n = std::isfinite(stable) ? std::max(1L, long(std::ceil(total / stable * (1.0 - 1e-12)))) : 1L;
    const double h = total / double(n);
    Vector cur = s;
    for (long k = 0; k < n; ++k) {
      // re-check with the current saturation; the bound is saturation-independent
      cur = advance_saturation(cur, tr, h, totals, step_index);
    }
    if (substeps) *substeps += std::size_t(n);
    return cur;
  }

  /// Pressure consistent with saturation s at time t (controls in effect just before t).
  Vector snapshot_pressure(const Vector& s, double t) const { return solve_pressure(s, controls_before(t)); }

  /// Advances s from t0 to t1 along the step grid.
  Vector advance(Vector s, double t0, double t1, WellTotals* totals = nullptr, std::size_t* substeps = nullptr) const {
    const auto times = step_times(cfg_->horizon, cfg_->dt);
    const auto i0 = find_step(times, t0);
    const auto i1 = find_step(times, t1);
    require(i0 >= 0 && i1 >= i0, "two-phase advance: window endpoints must be step times");
    for (auto k = i0; k < i1; ++k)
      s = step(s, times[std::size_t(k)], times[std::size_t(k + 1)] - times[std::size_t(k)], totals, substeps, k);
    return s;
  }

private:
  Grid2D grid_;
  const TwoPhaseConfig* cfg_;
  std::vector<Face> faces_;
  double volume_ = 0.0;
  double fw_slope_ = 0.0;
  std::vector<Eigen::Index> injector_cells_;
  std::vector<Eigen::Index> producer_cells_;
  std::vector<double> injector_index_;
  std::vector<double> producer_index_;
};

inline Vector solve_pressure(const Field& log_perm, const Field& saturation, const TwoPhaseConfig& cfg,
                             double t = 0.0) {
  require(saturation.grid() == log_perm.grid(), "solve_pressure: grid mismatch");
  TwoPhaseSolver solver(log_perm, cfg);
  return solver.solve_pressure(saturation.values(), solver.controls_at(t));
}

/// Single explicit saturation update of dt days with fluxes from p.
inline Field advance_saturation(const Field& log_perm, const Field& s, const Vector& p,
                                const TwoPhaseConfig& cfg, double dt, double t = 0.0) {
  TwoPhaseSolver solver(log_perm, cfg);
  const auto ctl = solver.controls_at(t);
  const auto tr = solver.transport(s.values(), p, ctl);
  return Field(s.grid(), solver.advance_saturation(s.values(), tr, dt * seconds_per_day));
}

/// IMPES run over [0, T]; snapshots at every pressure-step time.
inline TwoPhaseTrajectory simulate_two_phase(const Field& log_perm, const TwoPhaseConfig& cfg) {
  TwoPhaseSolver solver(log_perm, cfg);
  TwoPhaseTrajectory traj;
  traj.grid = log_perm.grid();
  traj.injector_index = solver.injector_index();
  traj.producer_index = solver.producer_index();
  traj.injector_cells = solver.injector_cells();
  traj.producer_cells = solver.producer_cells();

  const auto times = step_times(cfg.horizon, cfg.dt);
  Vector s = Vector::Constant(traj.grid.cell_count(), cfg.initial_saturation);
  WellTotals totals = solver.zero_totals();
  traj.snapshots.push_back({0.0, solver.snapshot_pressure(s, 0.0), s, totals});
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    s = solver.step(s, times[k], times[k + 1] - times[k], &totals, &traj.saturation_substeps, std::ptrdiff_t(k));
    traj.snapshots.push_back({times[k + 1], solver.snapshot_pressure(s, times[k + 1]), s, totals});
  }
  return traj;
}

/// Peaceman-model well data at one state: injector BHPs (Pa) then producer
/// total rates (m^3/day, negative when producing).
inline Vector well_measurements(const TwoPhaseConfig& cfg, const std::vector<double>& injector_index,
                                const std::vector<double>& producer_index,
                                const std::vector<Eigen::Index>& injector_cells,
                                const std::vector<Eigen::Index>& producer_cells, const Vector& p,
                                const Vector& s, double t) {
  Vector out(Eigen::Index(cfg.well_count()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < cfg.injectors.size(); ++l) {
    const auto c = injector_cells[l];
    const double q = cfg.injectors[l].rate.value_before(t) / seconds_per_day;
    out[k++] = q / (injector_index[l] * mobilities(s[c], cfg.relperm).total) + p[c];
  }
  for (std::size_t l = 0; l < cfg.producers.size(); ++l) {
    const auto c = producer_cells[l];
    const double bhp = cfg.producers[l].bhp.value_before(t);
    out[k++] = producer_index[l] * mobilities(s[c], cfg.relperm).total * (bhp - p[c]) * seconds_per_day;
  }
  return out;
}

/// Stacked measurement vector: per time, injector BHPs then producer rates.
inline Vector measure_two_phase(const TwoPhaseTrajectory& traj, const TwoPhaseConfig& cfg,
                                const std::vector<double>& times) {
  std::vector<double> snap_times;
  for (const auto& sn : traj.snapshots) snap_times.push_back(sn.time);
  const auto nw = Eigen::Index(cfg.well_count());
  Vector out(nw * Eigen::Index(times.size()));
  for (std::size_t n = 0; n < times.size(); ++n) {
    const auto idx = find_step(snap_times, times[n]);
    if (idx < 0) throw InvalidArgument("measure_two_phase: time " + std::to_string(times[n]) + " is not a solver step");
    const auto& sn = traj.snapshots[std::size_t(idx)];
    out.segment(Eigen::Index(n) * nw, nw) =
        well_measurements(cfg, traj.injector_index, traj.producer_index, traj.injector_cells, traj.producer_cells,
                          sn.pressure, sn.saturation, sn.time);
  }
  return out;
}

}  // namespace dalab
