#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/forward_model.hpp"
#include "dalab/gaussian.hpp"
#include "dalab/prior.hpp"
#include "dalab/random.hpp"
#include "dalab/single_phase.hpp"
#include "dalab/two_phase.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dalab::harness {

using json = nlohmann::json;

enum class ModelKind { single_phase, two_phase };

struct PriorParams {
  double mean = 0.0;  // constant log-permeability
  double kappa = 1.0;
  double alpha = 1.3;
  CovarianceScaling scaling = CovarianceScaling::unit_square;
};

/// Truth draw: u = mean + amplitude * S_truth xi with S_truth built at kappa.
struct TruthParams {
  double kappa = 1.0;
  double amplitude = 1.0;
};

struct McmcParams {
  std::size_t chains = 8;
  std::size_t steps = 50000;
  std::size_t burn_in = 5000;
  std::size_t thin = 10;
  double beta = 0.015;
  int diagnostic_modes = 16;
  std::size_t kept_samples = 100;  // retained for forecasts, spread over chains
  std::size_t checkpoints = 10;    // points on the PSRF/MPSRF trace
};

enum class MethodKind { map, lmap, rml, enkf, ensrf };

struct MethodParams {
  std::string name;
  MethodKind kind = MethodKind::map;
  std::size_t ensemble_size = 50;
  double localization = 0.0;  // Gaspari-Cohn critical length (m); 0 disables
  LMOptions lm;
};

/// Forecast continuation from the end of the assimilation period. Wells are
/// given for the extension only; their schedules must cover [T, horizon].
struct ForecastScenario {
  double horizon = 0.0;  // days, absolute end time
  std::size_t prior_samples = 100;
  std::size_t histogram_bins = 20;
  std::vector<WellSpec> wells;              // single-phase
  std::vector<InjectorSpec> injectors;      // two-phase
  std::vector<ProducerSpec> producers;      // two-phase
};

struct ExperimentConfig {
  std::string name;
  ModelKind kind = ModelKind::single_phase;
  Grid2D grid;
  PriorParams prior;
  TruthParams truth;
  SinglePhaseConfig single_phase;
  TwoPhaseConfig two_phase;
  std::vector<double> measurement_times;  // days
  Vector noise_per_well;                  // one sigma per observed well component
  McmcParams mcmc;
  std::vector<MethodParams> methods;
  std::optional<ForecastScenario> forecast;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  json source;  // parsed document, used for hashing

  double horizon() const { return kind == ModelKind::single_phase ? single_phase.horizon : two_phase.horizon; }
  std::size_t well_count() const {
    return kind == ModelKind::single_phase ? single_phase.wells.size() : two_phase.well_count();
  }

  const MethodParams& method(const std::string& n) const {
    for (const auto& m : methods)
      if (m.name == n) return m;
    throw InvalidArgument("config: unknown method '" + n + "'");
  }

  void validate() const {
    require(grid.nx > 0 && grid.ny > 0 && grid.length > 0.0, "config: bad grid");
    require(grid.nx == grid.ny, "config: the prior needs a square grid");
    require(prior.kappa > 0.0 && prior.alpha > 1.0, "config: prior needs kappa > 0 and alpha > 1");
    require(truth.kappa > 0.0 && truth.amplitude > 0.0, "config: truth needs kappa > 0 and amplitude > 0");
    if (kind == ModelKind::single_phase)
      single_phase.validate(grid);
    else
      two_phase.validate(grid);
    require(!measurement_times.empty(), "config: no measurement times");
    require(std::size_t(noise_per_well.size()) == well_count(), "config: need one noise level per well");
    require((noise_per_well.array() > 0.0).all(), "config: noise levels must be positive");
    require(mcmc.chains >= 2 && mcmc.steps > mcmc.burn_in && mcmc.thin >= 1, "config: bad chain settings");
    require(mcmc.beta > 0.0 && mcmc.beta <= 1.0, "config: beta must lie in (0,1]");
    require(mcmc.diagnostic_modes >= 1 && mcmc.checkpoints >= 1, "config: bad diagnostic settings");
    std::set<std::string> names;
    for (const auto& m : methods) {
      require(names.insert(m.name).second, "config: duplicate method '" + m.name + "'");
      m.lm.validate();
      if (m.kind != MethodKind::map) require(m.ensemble_size >= 2, "config: ensemble size must be at least 2");
      require(m.localization >= 0.0, "config: localization length must be nonnegative");
    }
    if (forecast) {
      require(forecast->horizon > horizon(), "config: forecast horizon must exceed the assimilation horizon");
      require(forecast->histogram_bins >= 1, "config: need at least one histogram bin");
      auto check = [&](const Schedule& s, const std::string& name) {
        require(s.covers(horizon(), forecast->horizon), "config: forecast schedule of " + name + " is incomplete");
      };
      for (const auto& w : forecast->wells) check(w.rate, w.name);
      for (const auto& w : forecast->injectors) check(w.rate, w.name);
      for (const auto& w : forecast->producers) check(w.bhp, w.name);
      if (kind == ModelKind::single_phase)
        require(!forecast->wells.empty(), "config: single-phase forecast needs wells");
      else
        require(!forecast->producers.empty(), "config: two-phase forecast needs producers");
    }
  }
};

namespace detail {

inline double get_days(const json& j, const std::string& key) {
  if (j.contains(key)) return j.at(key).get<double>();
  if (j.contains(key + "_years")) return j.at(key + "_years").get<double>() * days_per_year;
  throw InvalidArgument("config: missing '" + key + "'");
}

inline std::vector<double> get_times(const json& j, const std::string& key) {
  std::vector<double> t;
  if (j.contains(key)) return j.at(key).get<std::vector<double>>();
  if (j.contains(key + "_years")) {
    for (double v : j.at(key + "_years").get<std::vector<double>>()) t.push_back(v * days_per_year);
    return t;
  }
  throw InvalidArgument("config: missing '" + key + "'");
}

// A number is a constant over [t0, t1]; an array lists [start, end, value]
// segments (times in days).
inline Schedule parse_schedule(const json& j, double t0, double t1) {
  if (j.is_number()) return Schedule::constant(j.get<double>(), t0, t1);
  std::vector<Schedule::Segment> segs;
  for (const auto& s : j) {
    require(s.is_array() && s.size() == 3, "config: schedule segments are [start, end, value]");
    segs.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
  }
  return Schedule(std::move(segs));
}

// Forecast schedules start at T; the solver wants [0, horizon], so the first
// value is held over [0, T]. Steps before T are never taken.
inline Schedule backfill(const Schedule& s) {
  if (s.start() <= 1e-12) return s;
  auto segs = s.segments();
  segs.insert(segs.begin(), {0.0, s.start(), segs.front().value});
  return Schedule(std::move(segs));
}

inline WellSpec parse_rate_well(const json& j, const char* key, double t0, double t1) {
  WellSpec w;
  w.name = j.at("name").get<std::string>();
  w.x = j.at("x").get<double>();
  w.y = j.at("y").get<double>();
  w.rate = parse_schedule(j.at(key), t0, t1);
  return w;
}

inline InjectorSpec parse_injector(const json& j, double t0, double t1) {
  const WellSpec w = parse_rate_well(j, "rate", t0, t1);
  InjectorSpec inj{w.name, w.x, w.y, w.rate, std::nullopt};
  if (j.contains("well_index")) inj.well_index = j.at("well_index").get<double>();
  return inj;
}

inline ProducerSpec parse_producer(const json& j, double t0, double t1) {
  const WellSpec w = parse_rate_well(j, "bhp", t0, t1);
  ProducerSpec p{w.name, w.x, w.y, w.rate, std::nullopt};
  if (j.contains("well_index")) p.well_index = j.at("well_index").get<double>();
  return p;
}

inline MethodKind parse_method_kind(const std::string& s) {
  if (s == "map") return MethodKind::map;
  if (s == "lmap") return MethodKind::lmap;
  if (s == "rml") return MethodKind::rml;
  if (s == "enkf") return MethodKind::enkf;
  if (s == "ensrf") return MethodKind::ensrf;
  throw InvalidArgument("config: unknown method kind '" + s + "'");
}

inline LMOptions parse_lm(const json& j) {
  LMOptions o;
  o.initial_damping = j.value("initial_damping", o.initial_damping);
  o.damping_up = j.value("damping_up", o.damping_up);
  o.damping_down = j.value("damping_down", o.damping_down);
  o.max_iterations = j.value("max_iterations", o.max_iterations);
  o.max_retries = j.value("max_retries", o.max_retries);
  o.objective_tolerance = j.value("objective_tolerance", o.objective_tolerance);
  o.step_tolerance = j.value("step_tolerance", o.step_tolerance);
  o.gradient_tolerance = j.value("gradient_tolerance", o.gradient_tolerance);
  o.fd_step = j.value("fd_step", o.fd_step);
  o.final_jacobian = j.value("final_jacobian", o.final_jacobian);
  return o;
}

inline RelPermModel parse_relperm(const json& j) {
  RelPermModel r;
  r.a_w = j.value("a_w", r.a_w);
  r.a_o = j.value("a_o", r.a_o);
  r.s_iw = j.value("s_iw", r.s_iw);
  r.s_or = j.value("s_or", r.s_or);
  r.mu_w = j.value("mu_w", r.mu_w);
  r.mu_o = j.value("mu_o", r.mu_o);
  return r;
}

}  // namespace detail

/// Builds a config from a parsed document. Unknown keys are ignored; missing
/// optional keys take the struct defaults.
inline ExperimentConfig parse_config(const json& doc) {
  using namespace detail;
  ExperimentConfig cfg;
  cfg.source = doc;
  cfg.name = doc.value("name", std::string("experiment"));
  const std::string kind = doc.at("model").get<std::string>();
  if (kind == "single-phase")
    cfg.kind = ModelKind::single_phase;
  else if (kind == "two-phase")
    cfg.kind = ModelKind::two_phase;
  else
    throw InvalidArgument("config: model must be single-phase or two-phase");
  require(doc.contains("seed"), "config: the seed must be given explicitly");
  cfg.seed = doc.at("seed").get<std::uint64_t>();
  cfg.workers = doc.value("workers", std::size_t(1));

  const json& g = doc.at("grid");
  cfg.grid = Grid2D(g.at("nx").get<int>(), g.at("ny").get<int>(), g.at("length").get<double>());

  const json& p = doc.at("prior");
  if (p.contains("mean"))
    cfg.prior.mean = p.at("mean").get<double>();
  else
    cfg.prior.mean = std::log(p.at("mean_permeability").get<double>());
  cfg.prior.kappa = p.at("kappa").get<double>();
  cfg.prior.alpha = p.value("alpha", cfg.prior.alpha);
  const std::string scaling = p.value("scaling", std::string("unit_square"));
  cfg.prior.scaling = scaling == "physical" ? CovarianceScaling::physical : CovarianceScaling::unit_square;
  cfg.truth.kappa = cfg.prior.kappa;
  if (doc.contains("truth")) {
    cfg.truth.kappa = doc["truth"].value("kappa", cfg.truth.kappa);
    cfg.truth.amplitude = doc["truth"].value("amplitude", cfg.truth.amplitude);
  }

  const json& m = doc.at(kind);
  if (cfg.kind == ModelKind::single_phase) {
    auto& sp = cfg.single_phase;
    sp.compressibility = m.value("compressibility", sp.compressibility);
    sp.porosity = m.value("porosity", sp.porosity);
    sp.viscosity = m.value("viscosity", sp.viscosity);
    sp.thickness = m.value("thickness", sp.thickness);
    sp.initial_pressure = m.value("initial_pressure", sp.initial_pressure);
    sp.horizon = get_days(m, "horizon");
    sp.dt = get_days(m, "dt");
    for (const auto& w : m.at("wells")) sp.wells.push_back(parse_rate_well(w, "rate", 0.0, sp.horizon));
  } else {
    auto& tp = cfg.two_phase;
    tp.porosity = m.value("porosity", tp.porosity);
    tp.thickness = m.value("thickness", tp.thickness);
    tp.initial_pressure = m.value("initial_pressure", tp.initial_pressure);
    tp.initial_saturation = m.value("initial_saturation", tp.initial_saturation);
    tp.horizon = get_days(m, "horizon");
    tp.dt = get_days(m, "dt");
    tp.cfl = m.value("cfl", tp.cfl);
    tp.well_radius = m.value("well_radius", tp.well_radius);
    if (m.contains("relperm")) tp.relperm = parse_relperm(m.at("relperm"));
    for (const auto& w : m.at("injectors")) tp.injectors.push_back(parse_injector(w, 0.0, tp.horizon));
    for (const auto& w : m.at("producers")) tp.producers.push_back(parse_producer(w, 0.0, tp.horizon));
  }
  cfg.measurement_times = get_times(m, "measurement_times");

  // noise: one sigma for every component, or per-well lists
  const json& nz = doc.at("noise");
  const auto nwell = cfg.well_count();
  cfg.noise_per_well = Vector::Zero(Eigen::Index(nwell));
  if (nz.contains("sigma")) {
    cfg.noise_per_well.setConstant(nz.at("sigma").get<double>());
  } else {
    require(cfg.kind == ModelKind::two_phase, "config: single-phase noise needs 'sigma'");
    const auto bhp = nz.at("injector_bhp").get<std::vector<double>>();
    const auto rate = nz.at("producer_rate").get<std::vector<double>>();
    require(bhp.size() == cfg.two_phase.injectors.size() && rate.size() == cfg.two_phase.producers.size(),
            "config: noise lists must match the well lists");
    Eigen::Index k = 0;
    for (double v : bhp) cfg.noise_per_well[k++] = v;
    for (double v : rate) cfg.noise_per_well[k++] = v;
  }

  if (doc.contains("mcmc")) {
    const json& c = doc["mcmc"];
    auto& mc = cfg.mcmc;
    mc.chains = c.value("chains", mc.chains);
    mc.steps = c.value("steps", mc.steps);
    mc.burn_in = c.value("burn_in", mc.burn_in);
    mc.thin = c.value("thin", mc.thin);
    mc.beta = c.value("beta", mc.beta);
    mc.diagnostic_modes = c.value("diagnostic_modes", mc.diagnostic_modes);
    mc.kept_samples = c.value("kept_samples", mc.kept_samples);
    mc.checkpoints = c.value("checkpoints", mc.checkpoints);
  }

  const LMOptions lm_default = doc.contains("lm") ? parse_lm(doc["lm"]) : LMOptions{};
  for (const auto& j : doc.value("methods", json::array())) {
    MethodParams mp;
    mp.name = j.at("name").get<std::string>();
    mp.kind = parse_method_kind(j.value("kind", mp.name));
    mp.ensemble_size = j.value("ensemble_size", mp.ensemble_size);
    mp.localization = j.value("localization", mp.localization);
    mp.lm = lm_default;
    if (j.contains("lm")) {
      json merged = doc.value("lm", json::object());
      merged.update(j["lm"]);
      mp.lm = parse_lm(merged);
    }
    cfg.methods.push_back(std::move(mp));
  }

  if (doc.contains("forecast")) {
    const json& f = doc["forecast"];
    ForecastScenario sc;
    const double t0 = cfg.horizon();
    sc.horizon = get_days(f, "horizon");
    sc.prior_samples = f.value("prior_samples", sc.prior_samples);
    sc.histogram_bins = f.value("histogram_bins", sc.histogram_bins);
    for (const auto& w : f.value("wells", json::array())) sc.wells.push_back(parse_rate_well(w, "rate", t0, sc.horizon));
    for (const auto& w : f.value("injectors", json::array())) sc.injectors.push_back(parse_injector(w, t0, sc.horizon));
    for (const auto& w : f.value("producers", json::array())) sc.producers.push_back(parse_producer(w, t0, sc.horizon));
    cfg.forecast = std::move(sc);
  }
  cfg.validate();
  return cfg;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt) {
  json doc = read_json(path);
  if (seed) doc["seed"] = *seed;
  return parse_config(doc);
}

/// FNV-1a over a byte string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

/// Key for the gold-standard cache: everything the chains depend on, i.e.
/// the document minus methods and forecast.
inline std::string gold_cache_key(const ExperimentConfig& cfg) {
  json doc = cfg.source;
  doc.erase("methods");
  doc.erase("forecast");
  doc.erase("lm");
  doc.erase("workers");
  doc.erase("name");
  return fnv1a_hex(doc.dump());
}

/// Problem objects built from a config.
struct Problem {
  std::shared_ptr<const GaussianPrior> prior;
  std::shared_ptr<const ForwardModel> model;
  Vector sigma;  // stacked noise deviations, time-major

  std::vector<std::pair<double, double>> well_locations() const { return model->observation_locations(); }
};

inline std::shared_ptr<const ForwardModel> make_model(const ExperimentConfig& cfg) {
  if (cfg.kind == ModelKind::single_phase)
    return std::make_shared<SinglePhaseModel>(cfg.grid, cfg.single_phase,
                                              measure_wells(cfg.single_phase.wells, cfg.measurement_times));
  return std::make_shared<TwoPhaseModel>(cfg.grid, cfg.two_phase, cfg.measurement_times);
}

inline Problem make_problem(const ExperimentConfig& cfg) {
  Problem p;
  p.prior = std::make_shared<GaussianPrior>(Field(cfg.grid, cfg.prior.mean), cfg.prior.kappa, cfg.prior.alpha,
                                            cfg.prior.scaling);
  p.model = make_model(cfg);
  const auto nw = cfg.noise_per_well.size();
  p.sigma.resize(nw * Eigen::Index(cfg.measurement_times.size()));
  for (std::size_t n = 0; n < cfg.measurement_times.size(); ++n) p.sigma.segment(Eigen::Index(n) * nw, nw) = cfg.noise_per_well;
  return p;
}

}  // namespace dalab::harness
