#include "dalab/forward_model.hpp"
#include "dalab/prior.hpp"
#include "dalab/single_phase.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dalab;

namespace {

SinglePhaseConfig nine_wells(double horizon = 50.0, double dt = 5.0) {
  SinglePhaseConfig cfg;
  cfg.horizon = horizon;
  cfg.dt = dt;
  int n = 1;
  for (double y : {250.0, 500.0, 750.0})
    for (double x : {250.0, 500.0, 750.0})
      cfg.wells.push_back({"P" + std::to_string(n++), x, y, Schedule::constant(85.0, 0.0, horizon)});
  return cfg;
}

Field prior_draw(const Grid2D& g, std::uint64_t seed) {
  GaussianPrior prior(Field(g, std::log(5e-13)), 2.0, 1.3);
  Rng rng(seed);
  return prior.sample(rng);
}

std::vector<double> desk_times() { return {5, 20, 30, 40, 50}; }

}  // namespace

TEST(SinglePhaseConfig, Validation) {
  Grid2D g(8, 8, 1000.0);
  SinglePhaseConfig cfg = nine_wells();
  EXPECT_NO_THROW(cfg.validate(g));
  cfg.dt = 7.0;
  EXPECT_THROW(cfg.validate(g), InvalidArgument);
  cfg = nine_wells();
  cfg.wells[0].x = 1000.0;
  EXPECT_THROW(cfg.validate(g), InvalidArgument);
  cfg = nine_wells();
  cfg.wells[0].rate = Schedule::constant(1.0, 0.0, 40.0);
  EXPECT_THROW(cfg.validate(g), InvalidArgument);
  cfg = nine_wells();
  cfg.porosity = 1.0;
  EXPECT_THROW(cfg.validate(g), InvalidArgument);
}

TEST(SinglePhaseSimulate, NoWellsKeepsInitialPressure) {
  Grid2D g(8, 8, 1000.0);
  SinglePhaseConfig cfg;
  const auto traj = simulate(Field(g, std::log(5e-13)), cfg);
  ASSERT_EQ(traj.pressure.size(), 11u);
  for (const auto& p : traj.pressure) EXPECT_LT((p.array() - cfg.initial_pressure).abs().maxCoeff(), 1e-6);
}

TEST(SinglePhaseSimulate, GlobalMassBalanceEveryStep) {
  Grid2D g(16, 16, 1000.0);
  SinglePhaseConfig cfg;
  cfg.wells.push_back({"P", 330.0, 610.0, Schedule::constant(85.0, 0.0, cfg.horizon)});
  const auto traj = simulate(prior_draw(g, 3), cfg);
  const double storage = cfg.compressibility * cfg.porosity * g.cell_area() * cfg.thickness;
  for (std::size_t n = 0; n < traj.times.size(); ++n) {
    const double stored = storage * (traj.pressure[n].array() - cfg.initial_pressure).sum();
    const double withdrawn = 85.0 * traj.times[n];  // m^3
    if (n == 0) {
      EXPECT_EQ(stored, 0.0);
      continue;
    }
    EXPECT_NEAR(stored / -withdrawn, 1.0, 1e-8) << "step " << n;
  }
}

TEST(SinglePhaseSimulate, FirstOrderInTime) {
  Grid2D g(16, 16, 1000.0);
  const Field u = prior_draw(g, 4);
  auto final_pressure = [&](double dt) {
    SinglePhaseConfig cfg = nine_wells(20.0, dt);
    return simulate(u, cfg).pressure.back();
  };
  const Vector p1 = final_pressure(4.0), p2 = final_pressure(2.0), p4 = final_pressure(1.0);
  const double ratio = (p1 - p2).norm() / (p2 - p4).norm();
  EXPECT_NEAR(ratio, 2.0, 0.2);
}

TEST(SinglePhaseSimulate, ReflectionSymmetry) {
  Grid2D g(12, 12, 1200.0);
  Field u = prior_draw(g, 5);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx / 2; ++i) u[g.index(g.nx - 1 - i, j)] = u[g.index(i, j)];
  SinglePhaseConfig cfg;
  cfg.wells.push_back({"A", 250.0, 400.0, Schedule::constant(40.0, 0.0, cfg.horizon)});
  cfg.wells.push_back({"B", 950.0, 400.0, Schedule::constant(40.0, 0.0, cfg.horizon)});
  const Vector p = simulate(u, cfg).pressure.back();
  const double scale = (p.array() - cfg.initial_pressure).abs().maxCoeff();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      EXPECT_NEAR(p[g.index(i, j)], p[g.index(g.nx - 1 - i, j)], 1e-9 * scale);
}

TEST(SinglePhaseSimulate, RejectsNonFiniteField) {
  Grid2D g(4, 4, 100.0);
  Field u(g, 0.0);
  u[3] = std::nan("");
  EXPECT_THROW(simulate(u, SinglePhaseConfig{}), InvalidArgument);
}

TEST(SinglePhaseMeasure, ConstantTrajectoryRepeatsInitialPressure) {
  Grid2D g(8, 8, 1000.0);
  SinglePhaseConfig cfg = nine_wells();
  for (auto& w : cfg.wells) w.rate = Schedule::constant(0.0, 0.0, cfg.horizon);
  const Vector m = forward_G(Field(g, std::log(5e-13)), cfg, measure_wells(cfg.wells, desk_times()));
  ASSERT_EQ(m.size(), 45);
  EXPECT_LT((m.array() - cfg.initial_pressure).abs().maxCoeff(), 1e-6);
}

TEST(SinglePhaseMeasure, DeskLayoutHas45Components) {
  SinglePhaseConfig cfg = nine_wells();
  EXPECT_EQ(measure_wells(cfg.wells, desk_times()).size(), 45u);
}

TEST(SinglePhaseMeasure, PermutingWellsPermutesBlocks) {
  Grid2D g(8, 8, 1000.0);
  const Field u = prior_draw(g, 6);
  SinglePhaseConfig cfg = nine_wells();
  const auto traj = simulate(u, cfg);
  auto sched = measure_wells(cfg.wells, desk_times());
  auto swapped = sched;
  std::swap(swapped.locations[0], swapped.locations[7]);
  std::swap(swapped.locations[2], swapped.locations[4]);
  const Vector a = measure(traj, sched), b = measure(traj, swapped);
  const int perm[9] = {7, 1, 4, 3, 2, 5, 6, 0, 8};
  for (int n = 0; n < 5; ++n)
    for (int l = 0; l < 9; ++l) EXPECT_EQ(b[9 * n + l], a[9 * n + perm[l]]);
}

TEST(SinglePhaseMeasure, TimeOffGridThrows) {
  Grid2D g(4, 4, 1000.0);
  SinglePhaseConfig cfg = nine_wells();
  const auto traj = simulate(Field(g, -28.0), cfg);
  EXPECT_THROW(measure(traj, measure_wells(cfg.wells, {12.0})), InvalidArgument);
}

TEST(ForwardG, BitIdenticalOnRepeat) {
  Grid2D g(16, 16, 1000.0);
  const Field u = prior_draw(g, 7);
  SinglePhaseConfig cfg = nine_wells();
  const auto sched = measure_wells(cfg.wells, desk_times());
  const Vector a = forward_G(u, cfg, sched), b = forward_G(u, cfg, sched);
  EXPECT_EQ(a, b);
}

TEST(ForwardG, RaisingLogPermeabilityChangesPressures) {
  Grid2D g(16, 16, 1000.0);
  Field u = prior_draw(g, 8);
  SinglePhaseConfig cfg = nine_wells();
  const auto sched = measure_wells(cfg.wells, desk_times());
  const Vector a = forward_G(u, cfg, sched);
  u.values().array() += 1.0;
  const Vector b = forward_G(u, cfg, sched);
  for (Eigen::Index k = 0; k < a.size(); ++k) EXPECT_NE(a[k], b[k]);
  // more permeable rock: smaller drawdown at the producing wells
  EXPECT_GT(b.minCoeff(), a.minCoeff());
}

TEST(ForwardG, WindowedModelMatchesDirectSimulation) {
  Grid2D g(12, 12, 1000.0);
  const Field u = prior_draw(g, 9);
  SinglePhaseConfig cfg = nine_wells();
  const auto sched = measure_wells(cfg.wells, desk_times());
  SinglePhaseModel model(g, cfg, sched);
  const Vector direct = forward_G(u, cfg, sched);
  const Vector via_model = model.evaluate(u.values());
  EXPECT_EQ(direct, via_model);

  Vector state = model.initial_state(u.values());
  for (std::size_t n = 0; n < model.window_count(); ++n) {
    auto [next, w] = model.advance(u.values(), state, n);
    EXPECT_EQ(w, direct.segment(Eigen::Index(n) * 9, 9));
    state = next;
  }
  EXPECT_DOUBLE_EQ(model.forward_runs(), 2.0);
}

TEST(JacobianFd, RecoversLinearMap) {
  Rng rng(10);
  const Matrix b = rng.normal_matrix(5, 7);
  const Vector x = rng.normal_vector(7);
  const Matrix q = jacobian_fd([&](const Vector& v) { return Vector(b * v); }, x, 0.1);
  EXPECT_LT((q - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(JacobianFd, RejectsNonPositiveStep) {
  EXPECT_THROW(jacobian_fd([](const Vector& v) { return v; }, Vector::Zero(2), 0.0), InvalidArgument);
}

TEST(JacobianFd, DirectionalDerivativeAgrees) {
  Grid2D g(8, 8, 1000.0);
  const Field u = prior_draw(g, 11);
  SinglePhaseConfig cfg = nine_wells();
  const auto sched = measure_wells(cfg.wells, desk_times());
  const Matrix q = jacobian_fd(u, cfg, sched, 1e-3);
  Rng rng(12);
  const Vector d = rng.normal_vector(g.cell_count()).normalized();
  auto g_of = [&](const Vector& v) { return forward_G(Field(g, v), cfg, sched); };
  const double h = 1e-3;
  const Vector directional = (g_of(u.values() + h * d) - g_of(u.values() - h * d)) / (2 * h);
  EXPECT_LT((q * d - directional).norm() / directional.norm(), 1e-4);
}

TEST(JacobianFd, SecondOrderInStep) {
  Grid2D g(8, 8, 1000.0);
  const Field u = prior_draw(g, 13);
  SinglePhaseConfig cfg = nine_wells();
  const auto sched = measure_wells(cfg.wells, desk_times());
  auto g_of = [&](const Vector& v) { return forward_G(Field(g, v), cfg, sched); };
  Rng rng(14);
  const Vector d = rng.normal_vector(g.cell_count()).normalized();
  auto directional = [&](double h) {
    return Vector((g_of(u.values() + h * d) - g_of(u.values() - h * d)) / (2 * h));
  };
  const Vector d1 = directional(0.4), d2 = directional(0.2), d4 = directional(0.1);
  const double ratio = (d1 - d2).norm() / (d2 - d4).norm();
  EXPECT_NEAR(ratio, 4.0, 0.4);
}
