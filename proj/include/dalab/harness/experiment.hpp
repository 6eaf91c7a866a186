#pragma once

#include "dalab/ensemble.hpp"
#include "dalab/gaussian.hpp"
#include "dalab/gelman_rubin.hpp"
#include "dalab/harness/config.hpp"
#include "dalab/harness/forecast.hpp"
#include "dalab/harness/io.hpp"
#include "dalab/harness/metrics.hpp"
#include "dalab/likelihood.hpp"
#include "dalab/localization.hpp"
#include "dalab/mcmc.hpp"
#include "dalab/parallel.hpp"

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace dalab::harness {

// ---------------------------------------------------------------------------
// data

struct ObservationSet {
  std::vector<double> times;
  Vector g_truth;
  Vector y;
  Vector sigma;
  std::string checksum;
};

/// y = g + sigma * z with z standard normal; sigma = 0 gives y = g exactly.
inline Vector perturb(const Vector& g, const Vector& sigma, Rng& rng) {
  require(g.size() == sigma.size(), "perturb: size mismatch");
  require((sigma.array() >= 0.0).all(), "perturb: negative noise level");
  Vector y = g;
  for (Eigen::Index k = 0; k < g.size(); ++k) y[k] += sigma[k] * rng.normal();
  return y;
}

/// Truth draw at the truth covariance, scaled by the truth amplitude about the
/// prior mean.
inline Vector draw_truth(const ExperimentConfig& cfg, const GaussianPrior& prior, Rng& rng) {
  const GaussianPrior truth(prior.basis_ptr(), prior.mean(), cfg.truth.kappa, cfg.prior.alpha, cfg.prior.scaling);
  return prior.mean_vector() + cfg.truth.amplitude * truth.color(rng.normal_vector(truth.whitened_dimension()));
}

struct TruthAndData {
  Vector truth;
  ObservationSet data;
};

inline TruthAndData generate_truth_and_data(const ExperimentConfig& cfg, const Problem& pb) {
  Rng truth_rng(derive_seed(cfg.seed, "truth"));
  Rng noise_rng(derive_seed(cfg.seed, "noise"));
  TruthAndData out;
  out.truth = draw_truth(cfg, *pb.prior, truth_rng);
  out.data.times = cfg.measurement_times;
  out.data.g_truth = pb.model->evaluate(out.truth);
  out.data.sigma = pb.sigma;
  out.data.y = perturb(out.data.g_truth, pb.sigma, noise_rng);
  out.data.checksum = data_checksum(out.data.y);
  return out;
}

inline json observation_json(const ObservationSet& d) {
  return {{"times_days", d.times},
          {"g_truth", to_json(d.g_truth)},
          {"y", to_json(d.y)},
          {"sigma", to_json(d.sigma)},
          {"checksum", d.checksum}};
}

inline ObservationSet load_data(const fs::path& out) {
  const fs::path path = out / "truth" / "data.json";
  if (!fs::exists(path)) throw Error("no data at " + path.string() + "; run 'generate' first");
  const json j = load_json(path);
  ObservationSet d;
  d.times = j.at("times_days").get<std::vector<double>>();
  d.g_truth = vector_from_json(j.at("g_truth"));
  d.y = vector_from_json(j.at("y"));
  d.sigma = vector_from_json(j.at("sigma"));
  d.checksum = j.at("checksum").get<std::string>();
  if (data_checksum(d.y) != d.checksum) throw Error("data checksum mismatch in " + path.string());
  return d;
}

inline void stage_generate(const ExperimentConfig& cfg, const fs::path& out) {
  const Problem pb = make_problem(cfg);
  const TruthAndData td = generate_truth_and_data(cfg, pb);
  ensure_dir(out);
  write_json(out / "config.json", cfg.source);
  write_field(out / "truth" / "log_perm.csv", cfg.grid, td.truth);
  write_json(out / "truth" / "data.json", observation_json(td.data));

  const auto nw = Eigen::Index(cfg.well_count());
  const auto locs = pb.model->observation_locations();
  std::string csv = "component,time_days,well_x_m,well_y_m,g_truth,y,sigma\n";
  for (Eigen::Index k = 0; k < td.data.y.size(); ++k) {
    const auto& [x, y] = locs[std::size_t(k % nw)];
    csv += std::to_string(k) + ',' + fmt(td.data.times[std::size_t(k / nw)]) + ',' + fmt(x) + ',' + fmt(y) + ',' +
           fmt(td.data.g_truth[k]) + ',' + fmt(td.data.y[k]) + ',' + fmt(td.data.sigma[k]) + '\n';
  }
  write_text(out / "truth" / "observations.csv", csv);
}

// ---------------------------------------------------------------------------
// gold standard

inline fs::path gold_dir(const fs::path& out) { return out / "gold"; }

inline void run_gold_standard(const ExperimentConfig& cfg, const Problem& pb, const ObservationSet& data,
                              const fs::path& dir) {
  const auto& mc = cfg.mcmc;
  const Likelihood lik(pb.model, data.y, data.sigma);
  const GaussianPrior& prior = *pb.prior;
  const auto modes = std::min<Eigen::Index>(mc.diagnostic_modes, prior.whitened_dimension());
  const std::size_t retained = (mc.steps - mc.burn_in) / mc.thin;
  const std::size_t keep_per_chain = (mc.kept_samples + mc.chains - 1) / mc.chains;
  const std::size_t keep_stride = std::max<std::size_t>(1, retained / std::max<std::size_t>(1, keep_per_chain));

  struct ChainOutput {
    PosteriorMoments moments;
    Matrix coefficients;  // retained x modes
    std::vector<Vector> kept;
    std::string trace_csv;
    double acceptance = 0.0;
  };
  std::vector<ChainOutput> chains(mc.chains);

  pb.model->reset_counter();
  parallel_for(
      mc.chains,
      [&](std::size_t c) {
        Rng rng(derive_seed(cfg.seed, "mcmc/chain/" + std::to_string(c)));
        ChainOutput& co = chains[c];
        co.coefficients.resize(Eigen::Index(retained), modes);
        MomentAccumulator acc;
        ChainTrace trace;
        std::size_t r = 0;
        ChainState s = start_chain(prior.sample_vector(rng), mc.beta, lik);
        std::string csv = "step,phi,acceptance_rate";
        for (Eigen::Index m = 0; m < modes; ++m) csv += ",xi" + std::to_string(m + 1);
        csv += '\n';
        std::size_t accepted = 0, counted = 0;
        s = run_chain(
            std::move(s), mc.steps, mc.burn_in, mc.thin, prior, lik, rng,
            [&](const Vector& u, std::size_t k) {
              acc.add(u);
              const Vector xi = prior.whiten(u - prior.mean_vector()).head(modes);
              co.coefficients.row(Eigen::Index(r)) = xi.transpose();
              for (; counted < k; ++counted) accepted += std::size_t(trace.accepted[counted]);
              csv += std::to_string(k) + ',' + fmt(trace.phi[k - 1]) + ',' + fmt(double(accepted) / double(k));
              for (Eigen::Index m = 0; m < modes; ++m) csv += ',' + fmt(xi[m]);
              csv += '\n';
              if ((r + 1) % keep_stride == 0 && co.kept.size() < keep_per_chain) co.kept.push_back(u);
              ++r;
            },
            &trace);
        co.moments = acc.moments();
        co.trace_csv = std::move(csv);
        co.acceptance = s.acceptance_rate();
        std::clog << "chain " << c << ": acceptance " << co.acceptance << '\n';
      },
      cfg.workers);

  std::vector<PosteriorMoments> parts;
  std::vector<Vector> kept;
  json acceptance = json::array();
  for (std::size_t c = 0; c < mc.chains; ++c) {
    parts.push_back(chains[c].moments);
    kept.insert(kept.end(), chains[c].kept.begin(), chains[c].kept.end());
    acceptance.push_back(chains[c].acceptance);
    write_text(dir / ("trace_chain_" + std::to_string(c) + ".csv"), chains[c].trace_csv);
  }
  const PosteriorMoments gold = pool_moments(parts);

  // Gelman-Rubin on the leading whitened coordinates, at evenly spaced checkpoints
  auto diagnostics = [&](std::size_t n, json& row) {
    std::vector<Matrix> blocks;
    for (const auto& co : chains) blocks.push_back(co.coefficients.topRows(Eigen::Index(n)));
    json per_mode = json::array();
    double worst = 0.0;
    for (Eigen::Index m = 0; m < modes; ++m) {
      std::vector<std::vector<double>> series;
      for (const auto& b : blocks) series.emplace_back(b.col(m).data(), b.col(m).data() + n);
      const double v = psrf(series);
      per_mode.push_back(v);
      worst = std::max(worst, v);
    }
    row["samples_per_chain"] = n;
    row["max_psrf"] = worst;
    row["psrf"] = per_mode;
    try {
      row["mpsrf"] = mpsrf(blocks);
    } catch (const Error&) {
      row["mpsrf"] = -1.0;  // within-chain covariance singular at this length
    }
  };
  json trace = json::array();
  for (std::size_t q = 1; q <= mc.checkpoints; ++q) {
    const std::size_t n = retained * q / mc.checkpoints;
    if (n < 4) continue;
    json row;
    diagnostics(n, row);
    row.erase("psrf");
    trace.push_back(row);
  }
  json final_row;
  diagnostics(retained, final_row);

  write_field(dir / "mean.csv", cfg.grid, gold.mean);
  write_field(dir / "variance.csv", cfg.grid, gold.variance);
  write_members(dir / "samples.csv", kept);
  json diag = {{"chains", mc.chains},
               {"steps", mc.steps},
               {"burn_in", mc.burn_in},
               {"thin", mc.thin},
               {"beta", mc.beta},
               {"samples_per_chain", retained},
               {"acceptance_rate", acceptance},
               {"forward_runs", pb.model->forward_runs()},
               {"data_checksum", data.checksum},
               {"psrf", final_row["psrf"]},
               {"max_psrf", final_row["max_psrf"]},
               {"mpsrf", final_row["mpsrf"]},
               {"psrf_trace", trace}};
  write_json(dir / "diagnostics.json", diag);
}

/// Runs the chains, or copies them from cache/<key> when present.
inline void stage_mcmc(const ExperimentConfig& cfg, const fs::path& out, const std::optional<fs::path>& cache) {
  const ObservationSet data = load_data(out);
  const fs::path dir = gold_dir(out);
  std::optional<fs::path> cached;
  if (cache) cached = *cache / ("gold-" + gold_cache_key(cfg));
  if (cached && fs::exists(*cached / "diagnostics.json")) {
    const json diag = load_json(*cached / "diagnostics.json");
    if (diag.value("data_checksum", std::string()) == data.checksum) {
      std::clog << "gold standard loaded from " << cached->string() << '\n';
      ensure_dir(dir);
      fs::copy(*cached, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
      return;
    }
  }
  const Problem pb = make_problem(cfg);
  ensure_dir(dir);
  run_gold_standard(cfg, pb, data, dir);
  if (cached) {
    const fs::path tmp = cached->string() + ".partial";
    fs::remove_all(tmp);
    ensure_dir(tmp);
    fs::copy(dir, tmp, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::remove_all(*cached);
    fs::rename(tmp, *cached);
  }
}

// ---------------------------------------------------------------------------
// approximations

struct MethodOutput {
  std::vector<Vector> members;
  Vector mean;
  Vector variance;
  double forward_runs = 0.0;
  json details = json::object();
};

inline std::string kind_name(MethodKind k) {
  switch (k) {
    case MethodKind::map: return "map";
    case MethodKind::lmap: return "lmap";
    case MethodKind::rml: return "rml";
    case MethodKind::enkf: return "enkf";
    case MethodKind::ensrf: return "ensrf";
  }
  return "unknown";
}

inline MethodOutput run_method(const ExperimentConfig& cfg, const Problem& pb, const ObservationSet& data,
                               const MethodParams& mp) {
  const Likelihood lik(pb.model, data.y, data.sigma);
  const GaussianPrior& prior = *pb.prior;
  // variants differing only in localization share a stream (paired comparison)
  Rng rng(derive_seed(cfg.seed, "method/" + kind_name(mp.kind) + "/" + std::to_string(mp.ensemble_size)));
  pb.model->reset_counter();
  MethodOutput out;

  auto from_members = [&](std::vector<Vector> members) {
    require(members.size() >= 2, "method " + mp.name + ": fewer than two usable members");
    const PosteriorMoments m = posterior_moments(members);
    out.mean = m.mean;
    out.variance = m.variance;
    out.members = std::move(members);
  };

  switch (mp.kind) {
    case MethodKind::map:
    case MethodKind::lmap: {
      const MapResult map = map_estimate(prior, lik, mp.lm);
      const CmapFactor factor = cmap(map, prior);
      out.details = {{"objective", map.objective},
                     {"initial_objective", map.initial_objective},
                     {"iterations", map.iterations},
                     {"gradient_norm", map.gradient_norm},
                     {"converged", map.converged}};
      if (mp.kind == MethodKind::map) {
        out.mean = map.u;
        out.variance = factor.pointwise_variance();
        out.members = {map.u};
      } else {
        from_members(lmap_sample(factor, prior, mp.ensemble_size, rng));
      }
      break;
    }
    case MethodKind::rml: {
      const RmlResult r = rml_sample(prior, lik, mp.ensemble_size, mp.lm, rng, cfg.workers);
      out.details = {{"excluded", r.excluded}, {"mean_iterations", r.mean_iterations()}};
      from_members(r.members);
      break;
    }
    case MethodKind::enkf:
    case MethodKind::ensrf: {
      std::optional<LocalizationSpec> loc;
      if (mp.localization > 0.0) loc = build_localization(cfg.grid, pb.model->observation_locations(), mp.localization);
      const FilterKind kind = mp.kind == MethodKind::enkf ? FilterKind::enkf : FilterKind::ensrf;
      const FilterResult r =
          run_filter(*pb.model, prior, data.y, data.sigma, mp.ensemble_size, kind, rng, loc ? &*loc : nullptr);
      std::vector<Vector> members;
      for (Eigen::Index j = 0; j < r.ensemble.size(); ++j) members.push_back(r.ensemble.u.col(j));
      out.details = {{"dropped", r.ensemble.dropped}};
      from_members(std::move(members));
      break;
    }
  }
  out.forward_runs = pb.model->forward_runs();
  return out;
}

inline fs::path method_dir(const fs::path& out, const std::string& name) { return out / "methods" / name; }

inline void stage_approx(const ExperimentConfig& cfg, const fs::path& out, const std::string& name) {
  const MethodParams& mp = cfg.method(name);
  const ObservationSet data = load_data(out);
  const Problem pb = make_problem(cfg);
  const MethodOutput r = run_method(cfg, pb, data, mp);
  const fs::path dir = method_dir(out, name);
  ensure_dir(dir);
  write_field(dir / "mean.csv", cfg.grid, r.mean);
  write_field(dir / "variance.csv", cfg.grid, r.variance);
  write_members(dir / "members.csv", r.members);
  write_json(dir / "result.json", {{"method", mp.name},
                                   {"kind", kind_name(mp.kind)},
                                   {"ensemble_size", mp.kind == MethodKind::map ? 1 : mp.ensemble_size},
                                   {"localization_m", mp.localization},
                                   {"members", r.members.size()},
                                   {"forward_runs", r.forward_runs},
                                   {"data_checksum", data.checksum},
                                   {"details", r.details}});
}

// ---------------------------------------------------------------------------
// evaluation

inline void stage_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  const ObservationSet data = load_data(out);
  const fs::path gd = gold_dir(out);
  if (!fs::exists(gd / "diagnostics.json")) throw Error("no gold standard; run 'mcmc' first");
  const json diag = load_json(gd / "diagnostics.json");
  if (diag.at("data_checksum").get<std::string>() != data.checksum)
    throw Error("gold standard was computed from different data");
  const Vector gold_mean = read_field(gd / "mean.csv");
  const Vector gold_var = read_field(gd / "variance.csv");
  const Vector prior_mean = Vector::Constant(cfg.grid.cell_count(), cfg.prior.mean);

  json methods = json::array();
  std::string csv = "method,eps_u,eps_sigma,forward_runs\n";
  for (const auto& mp : cfg.methods) {
    const fs::path dir = method_dir(out, mp.name);
    if (!fs::exists(dir / "result.json")) throw Error("method " + mp.name + " has not been run");
    const json res = load_json(dir / "result.json");
    if (res.at("data_checksum").get<std::string>() != data.checksum)
      throw Error("method " + mp.name + " consumed different data");
    const RelativeErrors e = relative_errors(cfg.grid, read_field(dir / "mean.csv"), read_field(dir / "variance.csv"),
                                            gold_mean, gold_var, prior_mean);
    const double cost = res.at("forward_runs").get<double>();
    methods.push_back({{"method", mp.name}, {"eps_u", e.eps_u}, {"eps_sigma", e.eps_sigma}, {"forward_runs", cost}});
    csv += mp.name + ',' + fmt(e.eps_u) + ',' + fmt(e.eps_sigma) + ',' + fmt(cost) + '\n';
  }
  write_json(out / "evaluation.json", {{"data_checksum", data.checksum}, {"methods", methods}});
  write_text(out / "errors.csv", csv);
}

// ---------------------------------------------------------------------------
// forecast

struct QuantileRow {
  std::string set, well, quantity, unit;
  double time = 0.0;
  std::array<double, 5> q{};
  double reference = 0.0;
  bool operator==(const QuantileRow&) const = default;
};

struct HistogramRow {
  std::string set, well, quantity, unit;
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  bool operator==(const HistogramRow&) const = default;
};

struct SetSummary {
  std::string name;
  std::size_t members = 0;
  std::size_t failures = 0;
  bool operator==(const SetSummary&) const = default;
};

struct ForecastTables {
  std::vector<SetSummary> sets;
  std::vector<QuantileRow> quantiles;
  std::vector<HistogramRow> histograms;
  bool operator==(const ForecastTables&) const = default;
};

/// Quantile tables and terminal histograms for named sample sets. Bins for a
/// key share one range across sets.
inline ForecastTables forecast_tables(const ForecastRunner& runner,
                                      const std::vector<std::pair<std::string, std::vector<Vector>>>& sets,
                                      std::size_t bins, std::size_t workers = 1) {
  std::vector<ForecastSet> done(sets.size());
  parallel_for(
      sets.size(), [&](std::size_t i) { done[i] = forecast_samples(runner, sets[i].first, sets[i].second); },
      workers);
  ForecastTables t;
  const auto& keys = runner.keys();
  const auto& times = runner.times();
  const auto last = Eigen::Index(times.size()) - 1;
  for (const auto& s : done) {
    t.sets.push_back({s.name, s.runs.size(), s.failures});
    for (std::size_t k = 0; k < keys.size(); ++k)
      for (std::size_t n = 0; n < times.size(); ++n)
        t.quantiles.push_back({s.name, keys[k].well, keys[k].quantity, keys[k].unit, times[n],
                               set_quantiles(s, Eigen::Index(k), Eigen::Index(n)),
                               s.reference(Eigen::Index(k), Eigen::Index(n))});
  }
  for (std::size_t k = 0; k < keys.size(); ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : done)
      for (const auto& r : s.runs) {
        lo = std::min(lo, r(Eigen::Index(k), last));
        hi = std::max(hi, r(Eigen::Index(k), last));
      }
    for (const auto& s : done) {
      std::vector<double> v;
      for (const auto& r : s.runs) v.push_back(r(Eigen::Index(k), last));
      const Histogram h = histogram(v, lo, hi, bins);
      t.histograms.push_back({s.name, keys[k].well, keys[k].quantity, keys[k].unit, h.edges, h.counts});
    }
  }
  return t;
}

inline std::string quantiles_csv(const std::vector<QuantileRow>& rows) {
  std::string csv = "set,well,quantity,unit,time_days,q05,q25,q50,q75,q95,reference\n";
  for (const auto& r : rows) {
    csv += r.set + ',' + r.well + ',' + r.quantity + ',' + r.unit + ',' + fmt(r.time);
    for (double q : r.q) csv += ',' + fmt(q);
    csv += ',' + fmt(r.reference) + '\n';
  }
  return csv;
}

inline std::string histograms_csv(const std::vector<HistogramRow>& rows) {
  std::string csv = "set,well,quantity,unit,bin,lower,upper,count\n";
  for (const auto& r : rows)
    for (std::size_t b = 0; b < r.counts.size(); ++b)
      csv += r.set + ',' + r.well + ',' + r.quantity + ',' + r.unit + ',' + std::to_string(b) + ',' +
             fmt(r.edges[b]) + ',' + fmt(r.edges[b + 1]) + ',' + std::to_string(r.counts[b]) + '\n';
  return csv;
}

inline void to_json(json& j, const QuantileRow& r) {
  j = {{"set", r.set}, {"well", r.well}, {"quantity", r.quantity}, {"unit", r.unit},
       {"time_days", r.time}, {"q", r.q}, {"reference", r.reference}};
}
inline void from_json(const json& j, QuantileRow& r) {
  r.set = j.at("set");
  r.well = j.at("well");
  r.quantity = j.at("quantity");
  r.unit = j.at("unit");
  r.time = j.at("time_days");
  r.q = j.at("q").get<std::array<double, 5>>();
  r.reference = j.at("reference");
}
inline void to_json(json& j, const HistogramRow& r) {
  j = {{"set", r.set}, {"well", r.well}, {"quantity", r.quantity}, {"unit", r.unit},
       {"edges", r.edges}, {"counts", r.counts}};
}
inline void from_json(const json& j, HistogramRow& r) {
  r.set = j.at("set");
  r.well = j.at("well");
  r.quantity = j.at("quantity");
  r.unit = j.at("unit");
  r.edges = j.at("edges").get<std::vector<double>>();
  r.counts = j.at("counts").get<std::vector<std::size_t>>();
}
inline void to_json(json& j, const SetSummary& s) {
  j = {{"name", s.name}, {"members", s.members}, {"failures", s.failures}};
}
inline void from_json(const json& j, SetSummary& s) {
  s.name = j.at("name");
  s.members = j.at("members");
  s.failures = j.at("failures");
}
inline void to_json(json& j, const ForecastTables& t) {
  j = {{"sets", t.sets}, {"quantiles", t.quantiles}, {"histograms", t.histograms}};
}
inline void from_json(const json& j, ForecastTables& t) {
  t.sets = j.at("sets").get<std::vector<SetSummary>>();
  t.quantiles = j.at("quantiles").get<std::vector<QuantileRow>>();
  t.histograms = j.at("histograms").get<std::vector<HistogramRow>>();
}

inline void stage_forecast(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path dir = out / "forecast";
  ensure_dir(dir);
  if (!cfg.forecast) {
    write_json(dir / "tables.json", ForecastTables{});
    return;
  }
  const ForecastRunner runner(cfg);
  const Problem pb = make_problem(cfg);
  std::vector<std::pair<std::string, std::vector<Vector>>> sets;
  Rng rng(derive_seed(cfg.seed, "forecast/prior"));
  std::vector<Vector> prior_draws;
  for (std::size_t j = 0; j < cfg.forecast->prior_samples; ++j) prior_draws.push_back(pb.prior->sample_vector(rng));
  if (!prior_draws.empty()) sets.emplace_back("prior", std::move(prior_draws));
  if (!fs::exists(gold_dir(out) / "samples.csv")) throw Error("no gold samples; run 'mcmc' first");
  sets.emplace_back("mcmc", read_members(gold_dir(out) / "samples.csv"));
  for (const auto& mp : cfg.methods) {
    const fs::path f = method_dir(out, mp.name) / "members.csv";
    if (!fs::exists(f)) throw Error("method " + mp.name + " has not been run");
    sets.emplace_back(mp.name, read_members(f));
  }
  const ForecastTables t = forecast_tables(runner, sets, cfg.forecast->histogram_bins, cfg.workers);
  write_json(dir / "tables.json", t);
  write_text(dir / "quantiles.csv", quantiles_csv(t.quantiles));
  write_text(dir / "histograms.csv", histograms_csv(t.histograms));
}

// ---------------------------------------------------------------------------
// report

struct GoldSummary {
  std::size_t chains = 0;
  std::size_t samples_per_chain = 0;
  double forward_runs = 0.0;
  std::vector<double> acceptance_rate;
  std::vector<double> psrf;
  double max_psrf = 0.0;
  double mpsrf = 0.0;
  std::vector<std::array<double, 3>> psrf_trace;  // samples per chain, max PSRF, MPSRF
  std::string data_checksum;
  Vector mean;
  Vector variance;
  bool operator==(const GoldSummary&) const = default;
};

struct MethodSummary {
  std::string name;
  std::string kind;
  std::size_t ensemble_size = 0;
  double localization = 0.0;
  std::size_t members = 0;
  double forward_runs = 0.0;
  double eps_u = 0.0;
  double eps_sigma = 0.0;
  std::string data_checksum;
  json details;
  Vector mean;
  Vector variance;
  bool operator==(const MethodSummary&) const = default;
};

struct ExperimentReport {
  std::string name;
  std::string model;
  std::uint64_t seed = 0;
  Grid2D grid;
  std::string data_checksum;
  GoldSummary gold;
  std::vector<MethodSummary> methods;
  ForecastTables forecast;
  bool operator==(const ExperimentReport&) const = default;

  const MethodSummary& method(const std::string& n) const {
    for (const auto& m : methods)
      if (m.name == n) return m;
    throw InvalidArgument("report: no method '" + n + "'");
  }
};

inline void to_json(json& j, const GoldSummary& g) {
  j = {{"chains", g.chains},
       {"samples_per_chain", g.samples_per_chain},
       {"forward_runs", g.forward_runs},
       {"acceptance_rate", g.acceptance_rate},
       {"psrf", g.psrf},
       {"max_psrf", g.max_psrf},
       {"mpsrf", g.mpsrf},
       {"psrf_trace", g.psrf_trace},
       {"data_checksum", g.data_checksum},
       {"mean", to_json(g.mean)},
       {"variance", to_json(g.variance)}};
}
inline void from_json(const json& j, GoldSummary& g) {
  g.chains = j.at("chains");
  g.samples_per_chain = j.at("samples_per_chain");
  g.forward_runs = j.at("forward_runs");
  g.acceptance_rate = j.at("acceptance_rate").get<std::vector<double>>();
  g.psrf = j.at("psrf").get<std::vector<double>>();
  g.max_psrf = j.at("max_psrf");
  g.mpsrf = j.at("mpsrf");
  g.psrf_trace = j.at("psrf_trace").get<std::vector<std::array<double, 3>>>();
  g.data_checksum = j.at("data_checksum");
  g.mean = vector_from_json(j.at("mean"));
  g.variance = vector_from_json(j.at("variance"));
}
inline void to_json(json& j, const MethodSummary& m) {
  j = {{"method", m.name},
       {"kind", m.kind},
       {"ensemble_size", m.ensemble_size},
       {"localization_m", m.localization},
       {"members", m.members},
       {"forward_runs", m.forward_runs},
       {"eps_u", m.eps_u},
       {"eps_sigma", m.eps_sigma},
       {"data_checksum", m.data_checksum},
       {"details", m.details},
       {"mean", to_json(m.mean)},
       {"variance", to_json(m.variance)}};
}
inline void from_json(const json& j, MethodSummary& m) {
  m.name = j.at("method");
  m.kind = j.at("kind");
  m.ensemble_size = j.at("ensemble_size");
  m.localization = j.at("localization_m");
  m.members = j.at("members");
  m.forward_runs = j.at("forward_runs");
  m.eps_u = j.at("eps_u");
  m.eps_sigma = j.at("eps_sigma");
  m.data_checksum = j.at("data_checksum");
  m.details = j.at("details");
  m.mean = vector_from_json(j.at("mean"));
  m.variance = vector_from_json(j.at("variance"));
}
inline void to_json(json& j, const ExperimentReport& r) {
  j = {{"name", r.name},
       {"model", r.model},
       {"seed", r.seed},
       {"grid", {{"nx", r.grid.nx}, {"ny", r.grid.ny}, {"length_m", r.grid.length}}},
       {"data_checksum", r.data_checksum},
       {"gold", r.gold},
       {"methods", r.methods},
       {"forecast", r.forecast}};
}
inline void from_json(const json& j, ExperimentReport& r) {
  r.name = j.at("name");
  r.model = j.at("model");
  r.seed = j.at("seed");
  const json& g = j.at("grid");
  r.grid = Grid2D(g.at("nx"), g.at("ny"), g.at("length_m"));
  r.data_checksum = j.at("data_checksum");
  r.gold = j.at("gold").get<GoldSummary>();
  r.methods = j.at("methods").get<std::vector<MethodSummary>>();
  r.forecast = j.at("forecast").get<ForecastTables>();
}

inline std::string method_table_csv(const ExperimentReport& r) {
  std::string csv = "method,eps_u,eps_sigma,forward_runs\n";
  for (const auto& m : r.methods)
    csv += m.name + ',' + fmt(m.eps_u) + ',' + fmt(m.eps_sigma) + ',' + fmt(m.forward_runs) + '\n';
  return csv;
}

/// Writes report.json, the method table, mean/variance maps and plot data.
inline void emit_report(const ExperimentReport& r, const fs::path& dir) {
  ensure_dir(dir);
  write_json(dir / "report.json", r);
  write_text(dir / "report.csv", method_table_csv(r));
  write_field(dir / "maps" / "mcmc_mean.csv", r.grid, r.gold.mean);
  write_field(dir / "maps" / "mcmc_variance.csv", r.grid, r.gold.variance);
  for (const auto& m : r.methods) {
    write_field(dir / "maps" / (m.name + "_mean.csv"), r.grid, m.mean);
    write_field(dir / "maps" / (m.name + "_variance.csv"), r.grid, m.variance);
  }
  std::string trace = "samples_per_chain,max_psrf,mpsrf\n";
  for (const auto& t : r.gold.psrf_trace) trace += fmt(t[0]) + ',' + fmt(t[1]) + ',' + fmt(t[2]) + '\n';
  write_text(dir / "psrf_trace.csv", trace);
  write_text(dir / "forecast_quantiles.csv", quantiles_csv(r.forecast.quantiles));
  write_text(dir / "forecast_histograms.csv", histograms_csv(r.forecast.histograms));
}

inline ExperimentReport parse_report(const fs::path& dir) { return load_json(dir / "report.json").get<ExperimentReport>(); }

inline ExperimentReport assemble_report(const ExperimentConfig& cfg, const fs::path& out) {
  const ObservationSet data = load_data(out);
  ExperimentReport r;
  r.name = cfg.name;
  r.model = cfg.kind == ModelKind::single_phase ? "single-phase" : "two-phase";
  r.seed = cfg.seed;
  r.grid = cfg.grid;
  r.data_checksum = data.checksum;

  const fs::path gd = gold_dir(out);
  if (!fs::exists(gd / "diagnostics.json")) throw Error("no gold standard; run 'mcmc' first");
  const json diag = load_json(gd / "diagnostics.json");
  r.gold.chains = diag.at("chains");
  r.gold.samples_per_chain = diag.at("samples_per_chain");
  r.gold.forward_runs = diag.at("forward_runs");
  r.gold.acceptance_rate = diag.at("acceptance_rate").get<std::vector<double>>();
  r.gold.psrf = diag.at("psrf").get<std::vector<double>>();
  r.gold.max_psrf = diag.at("max_psrf");
  r.gold.mpsrf = diag.at("mpsrf");
  for (const auto& t : diag.at("psrf_trace"))
    r.gold.psrf_trace.push_back({t.at("samples_per_chain").get<double>(), t.at("max_psrf").get<double>(),
                                 t.at("mpsrf").get<double>()});
  r.gold.data_checksum = diag.at("data_checksum");
  r.gold.mean = read_field(gd / "mean.csv");
  r.gold.variance = read_field(gd / "variance.csv");
  if (r.gold.data_checksum != data.checksum) throw Error("gold standard was computed from different data");

  if (!cfg.methods.empty()) {
    if (!fs::exists(out / "evaluation.json")) throw Error("no evaluation; run 'evaluate' first");
    const json ev = load_json(out / "evaluation.json");
    for (const auto& mp : cfg.methods) {
      const fs::path dir = method_dir(out, mp.name);
      const json res = load_json(dir / "result.json");
      MethodSummary m;
      m.name = mp.name;
      m.kind = res.at("kind");
      m.ensemble_size = res.at("ensemble_size");
      m.localization = res.at("localization_m");
      m.members = res.at("members");
      m.forward_runs = res.at("forward_runs");
      m.data_checksum = res.at("data_checksum");
      m.details = res.at("details");
      m.mean = read_field(dir / "mean.csv");
      m.variance = read_field(dir / "variance.csv");
      bool found = false;
      for (const auto& e : ev.at("methods"))
        if (e.at("method") == mp.name) {
          m.eps_u = e.at("eps_u");
          m.eps_sigma = e.at("eps_sigma");
          found = true;
        }
      if (!found) throw Error("evaluation has no entry for " + mp.name + "; rerun 'evaluate'");
      if (m.data_checksum != data.checksum) throw Error("method " + mp.name + " consumed different data");
      r.methods.push_back(std::move(m));
    }
  }
  const fs::path tables = out / "forecast" / "tables.json";
  if (fs::exists(tables)) r.forecast = load_json(tables).get<ForecastTables>();
  return r;
}

inline void stage_report(const ExperimentConfig& cfg, const fs::path& out) {
  emit_report(assemble_report(cfg, out), out / "report");
}

/// Every stage in order; returns the parsed report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const fs::path& out,
                                       const std::optional<fs::path>& cache = std::nullopt) {
  stage_generate(cfg, out);
  stage_mcmc(cfg, out, cache);
  for (const auto& mp : cfg.methods) stage_approx(cfg, out, mp.name);
  stage_evaluate(cfg, out);
  stage_forecast(cfg, out);
  stage_report(cfg, out);
  return parse_report(out / "report");
}

}  // namespace dalab::harness
