#pragma once

#include "dalab/core.hpp"
#include "dalab/harness/config.hpp"
#include "dalab/single_phase.hpp"
#include "dalab/two_phase.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace dalab::harness {

/// One reported forecast quantity at one well.
struct ForecastKey {
  std::string well;
  std::string quantity;  // pressure | bhp | total_rate | cumulative_oil
  std::string unit;
};

/// Simulates fields through the assimilation period and the forecast
/// extension, recording every key at every solver step time.
class ForecastRunner {
public:
  explicit ForecastRunner(const ExperimentConfig& cfg) : cfg_(cfg) {
    require(cfg.forecast.has_value(), "forecast: the config has no forecast scenario");
    const auto& sc = *cfg.forecast;
    const double t0 = cfg.horizon();
    if (cfg.kind == ModelKind::single_phase) {
      extended_sp_ = cfg.single_phase;
      extended_sp_.horizon = sc.horizon;
      extended_sp_.wells.clear();
      for (const auto& w : sc.wells) {
        WellSpec e = w;
        e.rate = detail::backfill(w.rate);
        extended_sp_.wells.push_back(e);
        keys_.push_back({w.name, "pressure", "Pa"});
      }
      const double steps = (sc.horizon - t0) / cfg.single_phase.dt;
      require(std::abs(steps - std::round(steps)) < 1e-9, "forecast: extension must be a multiple of dt");
      for (double t : step_times(sc.horizon, cfg.single_phase.dt)) times_.push_back(t);
    } else {
      extended_tp_ = cfg.two_phase;
      extended_tp_.horizon = sc.horizon;
      extended_tp_.injectors.clear();
      extended_tp_.producers.clear();
      for (const auto& w : sc.injectors) {
        InjectorSpec e = w;
        e.rate = detail::backfill(w.rate);
        extended_tp_.injectors.push_back(e);
        keys_.push_back({w.name, "bhp", "Pa"});
      }
      for (const auto& w : sc.producers) {
        ProducerSpec e = w;
        e.bhp = detail::backfill(w.bhp);
        extended_tp_.producers.push_back(e);
        keys_.push_back({w.name, "total_rate", "m3/day"});
      }
      for (const auto& w : sc.producers) keys_.push_back({w.name, "cumulative_oil", "m3"});
      for (double t : step_times(t0, cfg.two_phase.dt)) times_.push_back(t);
      for (double t : step_times(sc.horizon - t0, cfg.two_phase.dt))
        if (t > 0.0) times_.push_back(t0 + t);
    }
  }

  const std::vector<ForecastKey>& keys() const { return keys_; }
  const std::vector<double>& times() const { return times_; }

  /// keys x times; throws SolverError on failure.
  Matrix run(const Vector& u) const {
    return cfg_.kind == ModelKind::single_phase ? run_single_phase(u) : run_two_phase(u);
  }

private:
  Matrix run_single_phase(const Vector& u) const {
    const Field f(cfg_.grid, u);
    const double t0 = cfg_.horizon();
    SinglePhaseStepper history(f, cfg_.single_phase);
    SinglePhaseStepper extension(f, extended_sp_);
    std::vector<Eigen::Index> cells;
    for (const auto& w : extended_sp_.wells) cells.push_back(cfg_.grid.locate(w.x, w.y));
    Matrix out(Eigen::Index(keys_.size()), Eigen::Index(times_.size()));
    Vector p = Vector::Constant(cfg_.grid.cell_count(), cfg_.single_phase.initial_pressure);
    for (std::size_t n = 0; n < times_.size(); ++n) {
      if (n > 0) {
        const double t = times_[n - 1];
        p = t < t0 - 1e-9 ? history.step(p, t, std::ptrdiff_t(n - 1)) : extension.step(p, t, std::ptrdiff_t(n - 1));
      }
      for (std::size_t l = 0; l < cells.size(); ++l) out(Eigen::Index(l), Eigen::Index(n)) = p[cells[l]];
    }
    return out;
  }

  Matrix run_two_phase(const Vector& u) const {
    const Field f(cfg_.grid, u);
    const double t0 = cfg_.horizon();
    TwoPhaseSolver history(f, cfg_.two_phase);
    TwoPhaseSolver extension(f, extended_tp_);
    const auto& base = cfg_.two_phase;
    const auto ni = extended_tp_.injectors.size(), np = extended_tp_.producers.size();

    // index of each forecast well in the history lists, or -1 if it is new
    auto find = [](const auto& list, const std::string& name) {
      for (std::size_t k = 0; k < list.size(); ++k)
        if (list[k].name == name) return std::ptrdiff_t(k);
      return std::ptrdiff_t(-1);
    };
    std::vector<std::ptrdiff_t> inj_map, prod_map;
    for (const auto& w : extended_tp_.injectors) inj_map.push_back(find(base.injectors, w.name));
    for (const auto& w : extended_tp_.producers) prod_map.push_back(find(base.producers, w.name));

    Matrix out = Matrix::Zero(Eigen::Index(keys_.size()), Eigen::Index(times_.size()));
    Vector s = Vector::Constant(cfg_.grid.cell_count(), base.initial_saturation);
    WellTotals hist_totals = history.zero_totals();
    WellTotals ext_totals = extension.zero_totals();
    std::vector<double> oil_at_switch(np, 0.0);

    auto record = [&](std::size_t n, double t, bool extended) {
      const TwoPhaseSolver& solver = extended ? extension : history;
      const TwoPhaseConfig& c = extended ? extended_tp_ : base;
      const Vector p = solver.snapshot_pressure(s, t);
      const Vector m = well_measurements(c, solver.injector_index(), solver.producer_index(), solver.injector_cells(),
                                         solver.producer_cells(), p, s, t);
      const auto col = Eigen::Index(n);
      const auto nbase_inj = Eigen::Index(c.injectors.size());
      for (std::size_t l = 0; l < ni; ++l) {
        const auto src = extended ? std::ptrdiff_t(l) : inj_map[l];
        if (src >= 0) out(Eigen::Index(l), col) = m[src];
      }
      for (std::size_t l = 0; l < np; ++l) {
        const auto src = extended ? std::ptrdiff_t(l) : prod_map[l];
        const auto rate_row = Eigen::Index(ni + l), oil_row = Eigen::Index(ni + np + l);
        if (src < 0) continue;
        out(rate_row, col) = m[nbase_inj + src];
        out(oil_row, col) = extended ? oil_at_switch[l] + ext_totals.produced_oil[l]
                                     : hist_totals.produced_oil[std::size_t(src)];
      }
    };

    record(0, 0.0, false);
    bool extended = false;
    for (std::size_t n = 1; n < times_.size(); ++n) {
      const double ta = times_[n - 1], tb = times_[n];
      if (!extended && ta >= t0 - 1e-9) {
        extended = true;
        for (std::size_t l = 0; l < np; ++l)
          oil_at_switch[l] = prod_map[l] >= 0 ? hist_totals.produced_oil[std::size_t(prod_map[l])] : 0.0;
      }
      if (extended)
        s = extension.step(s, ta, tb - ta, &ext_totals, nullptr, std::ptrdiff_t(n - 1));
      else
        s = history.step(s, ta, tb - ta, &hist_totals, nullptr, std::ptrdiff_t(n - 1));
      record(n, tb, extended && tb > t0 + 1e-9);
    }
    return out;
  }

  const ExperimentConfig& cfg_;
  SinglePhaseConfig extended_sp_;
  TwoPhaseConfig extended_tp_;
  std::vector<ForecastKey> keys_;
  std::vector<double> times_;
};

/// Linear-interpolation quantile (type 7) of unsorted data.
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile: empty data");
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * q;
  const auto lo = std::size_t(std::floor(h));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

inline constexpr double forecast_quantiles[5] = {0.05, 0.25, 0.5, 0.75, 0.95};

/// Forecasts of one sample set.
struct ForecastSet {
  std::string name;
  std::vector<Matrix> runs;  // successful members, keys x times
  Matrix reference;          // trajectory of the set's mean field
  std::size_t failures = 0;
};

inline ForecastSet forecast_samples(const ForecastRunner& runner, const std::string& name,
                                    const std::vector<Vector>& samples) {
  require(!samples.empty(), "forecast: empty sample set");
  ForecastSet set;
  set.name = name;
  Vector mean = Vector::Zero(samples.front().size());
  for (const auto& s : samples) mean += s;
  mean /= double(samples.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    try {
      set.runs.push_back(runner.run(samples[j]));
    } catch (const Error& e) {
      std::clog << "warning: forecast of " << name << " member " << j << " failed: " << e.what() << '\n';
      ++set.failures;
    }
  }
  if (set.runs.empty()) throw SolverError("forecast: every member of " + name + " failed");
  set.reference = runner.run(mean);
  return set;
}

/// Quantiles (rows: 5 levels) of key k at time n across the set.
inline std::array<double, 5> set_quantiles(const ForecastSet& set, Eigen::Index k, Eigen::Index n) {
  std::vector<double> v;
  for (const auto& r : set.runs) v.push_back(r(k, n));
  std::array<double, 5> q{};
  for (int i = 0; i < 5; ++i) q[std::size_t(i)] = quantile(v, forecast_quantiles[i]);
  return q;
}

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

/// Equal-width bins on [lo, hi]; the last bin is closed.
inline Histogram histogram(const std::vector<double>& v, double lo, double hi, std::size_t bins) {
  require(bins >= 1 && hi >= lo, "histogram: bad range");
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / double(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * double(b));
  for (double x : v) {
    std::size_t b = width > 0.0 ? std::size_t(std::floor((x - lo) / width)) : 0;
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

}  // namespace dalab::harness
