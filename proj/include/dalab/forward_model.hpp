#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/single_phase.hpp"
#include "dalab/two_phase.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace dalab {

/// Forward operator G(u) written as a sequence of assimilation windows:
/// the state v is propagated window by window (v_n = Psi_n(v_{n-1}, u)) and
/// observed at the window end (w_n = M_n(v_n)). G stacks the w_n.
///
/// Every window propagation is counted; forward_runs() reports the count
/// normalized to full [0, T] simulations.
class ForwardModel {
public:
  virtual ~ForwardModel() = default;

  virtual Eigen::Index parameter_size() const = 0;
  virtual std::size_t window_count() const = 0;
  virtual Eigen::Index window_observation_size() const = 0;

  virtual Vector initial_state(const Vector& u) const = 0;
  virtual Vector propagate(const Vector& u, const Vector& state, std::size_t window) const = 0;
  virtual Vector observe(const Vector& u, const Vector& state, std::size_t window) const = 0;

  /// Projects an analyzed state back onto its admissible set (e.g. saturation bounds).
  virtual void constrain_state(Vector&) const {}

  /// Physical location of each within-window observation, used for localization.
  virtual std::vector<std::pair<double, double>> observation_locations() const { return {}; }

  Eigen::Index observation_size() const {
    return window_observation_size() * Eigen::Index(window_count());
  }

  /// Psi_n followed by M_n; counts one window.
  std::pair<Vector, Vector> advance(const Vector& u, const Vector& state, std::size_t window) const {
    Vector next = propagate(u, state, window);
    window_evaluations_.fetch_add(1, std::memory_order_relaxed);
    Vector w = observe(u, next, window);
    return {std::move(next), std::move(w)};
  }

  /// G(u).
  Vector evaluate(const Vector& u) const {
    Vector out = evaluate_impl(u);
    window_evaluations_.fetch_add(window_count(), std::memory_order_relaxed);
    return out;
  }

  double forward_runs() const {
    return double(window_evaluations_.load()) / double(window_count());
  }
  std::uint64_t window_evaluations() const { return window_evaluations_.load(); }
  void reset_counter() const { window_evaluations_.store(0); }

protected:
  virtual Vector evaluate_impl(const Vector& u) const {
    Vector out(observation_size());
    Vector state = initial_state(u);
    const auto nw = window_observation_size();
    for (std::size_t n = 0; n < window_count(); ++n) {
      state = propagate(u, state, n);
      out.segment(Eigen::Index(n) * nw, nw) = observe(u, state, n);
    }
    return out;
  }

private:
  mutable std::atomic<std::uint64_t> window_evaluations_{0};
};

/// Window boundaries [0, t_1, ..., t_N] from measurement times.
inline std::vector<double> window_edges(const std::vector<double>& times) {
  std::vector<double> edges{0.0};
  edges.insert(edges.end(), times.begin(), times.end());
  return edges;
}

/// Single-phase Darcy flow observed as well-cell pressures; state v = p.
class SinglePhaseModel final : public ForwardModel {
public:
  SinglePhaseModel(Grid2D grid, SinglePhaseConfig cfg, MeasurementSchedule sched)
      : grid_(grid), cfg_(std::move(cfg)), sched_(std::move(sched)), edges_(window_edges(sched_.times)) {
    cfg_.validate(grid_);
    sched_.validate(cfg_.horizon);
    const auto steps = step_times(cfg_.horizon, cfg_.dt);
    for (double t : sched_.times)
      require(find_step(steps, t) >= 0, "SinglePhaseModel: measurement time not on the step grid");
    for (const auto& [x, y] : sched_.locations) cells_.push_back(grid_.locate(x, y));
  }

  const Grid2D& grid() const { return grid_; }
  const SinglePhaseConfig& config() const { return cfg_; }
  const MeasurementSchedule& schedule() const { return sched_; }

  Eigen::Index parameter_size() const override { return grid_.cell_count(); }
  std::size_t window_count() const override { return sched_.times.size(); }
  Eigen::Index window_observation_size() const override { return Eigen::Index(cells_.size()); }

  Vector initial_state(const Vector&) const override {
    return Vector::Constant(grid_.cell_count(), cfg_.initial_pressure);
  }

  Vector propagate(const Vector& u, const Vector& p, std::size_t n) const override {
    SinglePhaseStepper stepper(Field(grid_, u), cfg_);
    return stepper.advance(p, edges_[n], edges_[n + 1]);
  }

  Vector observe(const Vector&, const Vector& p, std::size_t) const override {
    Vector w(Eigen::Index(cells_.size()));
    for (std::size_t l = 0; l < cells_.size(); ++l) w[Eigen::Index(l)] = p[cells_[l]];
    return w;
  }

  std::vector<std::pair<double, double>> observation_locations() const override { return sched_.locations; }

protected:
  Vector evaluate_impl(const Vector& u) const override {
    // one factorization for the whole run
    SinglePhaseStepper stepper(Field(grid_, u), cfg_);
    Vector p = initial_state(u);
    const auto nw = window_observation_size();
    Vector out(observation_size());
    for (std::size_t n = 0; n < window_count(); ++n) {
      p = stepper.advance(p, edges_[n], edges_[n + 1]);
      out.segment(Eigen::Index(n) * nw, nw) = observe(u, p, n);
    }
    return out;
  }

private:
  Grid2D grid_;
  SinglePhaseConfig cfg_;
  MeasurementSchedule sched_;
  std::vector<double> edges_;
  std::vector<Eigen::Index> cells_;
};

/// Oil-water IMPES model observed through the Peaceman well model; state v = (p, s).
class TwoPhaseModel final : public ForwardModel {
public:
  TwoPhaseModel(Grid2D grid, TwoPhaseConfig cfg, std::vector<double> times)
      : grid_(grid), cfg_(std::move(cfg)), times_(std::move(times)), edges_(window_edges(times_)) {
    cfg_.validate(grid_);
    const auto steps = step_times(cfg_.horizon, cfg_.dt);
    for (std::size_t k = 0; k < times_.size(); ++k) {
      require(find_step(steps, times_[k]) >= 0, "TwoPhaseModel: measurement time not on the step grid");
      if (k > 0) require(times_[k] > times_[k - 1], "TwoPhaseModel: times must increase");
    }
  }

  const Grid2D& grid() const { return grid_; }
  const TwoPhaseConfig& config() const { return cfg_; }
  const std::vector<double>& times() const { return times_; }

  Eigen::Index parameter_size() const override { return grid_.cell_count(); }
  std::size_t window_count() const override { return times_.size(); }
  Eigen::Index window_observation_size() const override { return Eigen::Index(cfg_.well_count()); }

  Vector initial_state(const Vector& u) const override {
    TwoPhaseSolver solver(Field(grid_, u), cfg_);
    const auto n = grid_.cell_count();
    Vector state(2 * n);
    state.tail(n).setConstant(cfg_.initial_saturation);
    state.head(n) = solver.snapshot_pressure(state.tail(n), 0.0);
    return state;
  }

  Vector propagate(const Vector& u, const Vector& state, std::size_t n) const override {
    TwoPhaseSolver solver(Field(grid_, u), cfg_);
    const auto cells = grid_.cell_count();
    Vector s = solver.advance(state.tail(cells), edges_[n], edges_[n + 1]);
    Vector next(2 * cells);
    next.head(cells) = solver.snapshot_pressure(s, edges_[n + 1]);
    next.tail(cells) = std::move(s);
    return next;
  }

  Vector observe(const Vector& u, const Vector& state, std::size_t n) const override {
    TwoPhaseSolver solver(Field(grid_, u), cfg_);
    const auto cells = grid_.cell_count();
    return well_measurements(cfg_, solver.injector_index(), solver.producer_index(), solver.injector_cells(),
                             solver.producer_cells(), state.head(cells), state.tail(cells), edges_[n + 1]);
  }

  void constrain_state(Vector& state) const override {
    auto s = state.tail(grid_.cell_count());
    s = s.cwiseMax(cfg_.relperm.s_min()).cwiseMin(cfg_.relperm.s_max());
  }

  std::vector<std::pair<double, double>> observation_locations() const override {
    std::vector<std::pair<double, double>> out;
    for (const auto& w : cfg_.injectors) out.emplace_back(w.x, w.y);
    for (const auto& w : cfg_.producers) out.emplace_back(w.x, w.y);
    return out;
  }

protected:
  Vector evaluate_impl(const Vector& u) const override {
    TwoPhaseSolver solver(Field(grid_, u), cfg_);
    const auto cells = grid_.cell_count();
    const auto nw = window_observation_size();
    Vector s = Vector::Constant(cells, cfg_.initial_saturation);
    Vector out(observation_size());
    for (std::size_t n = 0; n < times_.size(); ++n) {
      s = solver.advance(s, edges_[n], edges_[n + 1]);
      const Vector p = solver.snapshot_pressure(s, edges_[n + 1]);
      out.segment(Eigen::Index(n) * nw, nw) =
          well_measurements(cfg_, solver.injector_index(), solver.producer_index(), solver.injector_cells(),
                            solver.producer_cells(), p, s, edges_[n + 1]);
    }
    return out;
  }

private:
  Grid2D grid_;
  TwoPhaseConfig cfg_;
  std::vector<double> times_;
  std::vector<double> edges_;
};

/// G(u) = B u + offset, one window, empty state. Test hook for linear-Gaussian checks.
class LinearModel final : public ForwardModel {
public:
  explicit LinearModel(Matrix b, Vector offset = Vector())
      : b_(std::move(b)), offset_(offset.size() ? std::move(offset) : Vector::Zero(b_.rows())) {}

  const Matrix& matrix() const { return b_; }

  Eigen::Index parameter_size() const override { return b_.cols(); }
  std::size_t window_count() const override { return 1; }
  Eigen::Index window_observation_size() const override { return b_.rows(); }
  Vector initial_state(const Vector&) const override { return Vector(); }
  Vector propagate(const Vector&, const Vector& state, std::size_t) const override { return state; }
  Vector observe(const Vector& u, const Vector&, std::size_t) const override { return b_ * u + offset_; }

private:
  Matrix b_;
  Vector offset_;
};

/// Arbitrary map u -> G(u) as a single window.
class FunctionModel final : public ForwardModel {
public:
  FunctionModel(Eigen::Index parameter_size, Eigen::Index observation_size, std::function<Vector(const Vector&)> g)
      : n_(parameter_size), m_(observation_size), g_(std::move(g)) {}

  Eigen::Index parameter_size() const override { return n_; }
  std::size_t window_count() const override { return 1; }
  Eigen::Index window_observation_size() const override { return m_; }
  Vector initial_state(const Vector&) const override { return Vector(); }
  Vector propagate(const Vector&, const Vector& state, std::size_t) const override { return state; }
  Vector observe(const Vector& u, const Vector&, std::size_t) const override { return g_(u); }

private:
  Eigen::Index n_;
  Eigen::Index m_;
  std::function<Vector(const Vector&)> g_;
};

}  // namespace dalab
