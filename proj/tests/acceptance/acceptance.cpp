// Acceptance runner: one PASS/FAIL line per criterion.
#include "dalab/ensemble.hpp"
#include "dalab/gaussian.hpp"
#include "dalab/gelman_rubin.hpp"
#include "dalab/localization.hpp"
#include "dalab/mcmc.hpp"
#include "dalab/single_phase.hpp"
#include "dalab/two_phase.hpp"
#include "dalab/harness/experiment.hpp"

#include "support/buckley_leverett.hpp"

#include <CLI11.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace dalab;
using namespace dalab::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  std::optional<fs::path> cache;
  int seeds = 5;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t n) { return std::min(n - 1, std::size_t(rng.uniform() * double(n))); }

Matrix random_spd(Eigen::Index n, Rng& rng) {
  const Matrix a = rng.normal_matrix(n, n);
  return a * a.transpose() / double(n) + 0.1 * Matrix::Identity(n, n);
}

// rms of standardized mean errors, relative norm of variance errors
std::pair<double, double> moment_errors(const std::vector<Vector>& samples, const GaussianMoments& exact) {
  const auto m = posterior_moments(samples);
  const Vector var = exact.covariance.diagonal();
  const double mean_err = std::sqrt(((m.mean - exact.mean).array().square() / var.array()).mean());
  const double var_err = (m.variance - var).norm() / var.norm();
  return {mean_err, var_err};
}

Outcome linear_gaussian_oracle(const Context&) {
  const auto t0 = Clock::now();
  const Eigen::Index n = 16, m = 4;
  const std::size_t count = 10000;
  Rng rng(101);
  const Matrix c = random_spd(n, rng);
  const Vector mean = rng.normal_vector(n);
  const Matrix b = rng.normal_matrix(m, n);
  const Vector sigma = Vector::Constant(m, 0.5);
  const Vector y = b * mean + rng.normal_vector(m);
  DenseGaussianPrior prior(mean, c);
  auto model = std::make_shared<LinearModel>(b, Vector::Zero(m));
  Likelihood lik(model, y, sigma);
  const auto exact = linear_gaussian_posterior(b, mean, c, y, Matrix(sigma.array().square().matrix().asDiagonal()));

  LMOptions lm;
  lm.gradient_tolerance = 1e-12;
  lm.step_tolerance = 1e-14;
  lm.max_iterations = 100;
  lm.final_jacobian = false;

  std::vector<std::pair<std::string, std::vector<Vector>>> runs;
  const auto map = map_estimate(prior, lik, lm);
  runs.emplace_back("lmap", lmap_sample(cmap(map, prior), prior, count, rng));
  runs.emplace_back("rml", rml_sample(prior, lik, count, lm, rng, 1).members);
  for (auto kind : {FilterKind::enkf, FilterKind::ensrf}) {
    const auto res = run_filter(*model, prior, y, sigma, count, kind, rng);
    std::vector<Vector> members;
    for (Eigen::Index j = 0; j < res.ensemble.size(); ++j) members.push_back(res.ensemble.u.col(j));
    runs.emplace_back(kind == FilterKind::enkf ? "enkf" : "ensrf", std::move(members));
  }

  bool pass = true;
  std::ostringstream os;
  for (const auto& [name, samples] : runs) {
    const auto [me, ve] = moment_errors(samples, exact);
    pass = pass && me <= 0.03 && ve <= 0.03;
    os << name << " mean " << fmt("%.4f", me) << " var " << fmt("%.4f", ve) << "; ";
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 60.0;
  os << "runtime " << fmt("%.1f", elapsed) << " s";
  return {pass, os.str()};
}

Outcome ensrf_exactness(const Context&) {
  Rng rng(202);
  double worst_cov = 0.0, worst_mean = 0.0;
  const int instances = 25;
  for (int t = 0; t < instances; ++t) {
    const Eigen::Index nu = 3 + pick(rng, 30), nw = 1 + pick(rng, 6);
    const Eigen::Index n = t == 0 ? 600 : 5 + pick(rng, 80);
    // correlated ensemble from a random SPD covariance
    const Matrix l = random_spd(nu + nw, rng).llt().matrixL();
    const Matrix z = l * rng.normal_matrix(nu + nw, n);
    EnsembleZ ens;
    ens.u = z.topRows(nu);
    ens.w = z.bottomRows(nw);
    ens.v = Matrix(0, n);
    const Vector sigma = (0.2 + rng.normal_vector(nw).array().abs()).matrix();
    const Vector y = rng.normal_vector(nw);

    auto stacked = [](const EnsembleZ& e) {
      Matrix z(e.u.rows() + e.w.rows(), e.size());
      z << e.u, e.w;
      return z;
    };
    auto moments = [](const Matrix& z) {
      const Vector mean = z.rowwise().mean();
      const Matrix d = z.colwise() - mean;
      return std::pair<Vector, Matrix>(mean, d * d.transpose() / double(z.cols() - 1));
    };
    const auto [mf, cf] = moments(stacked(ens));
    Matrix h = Matrix::Zero(nw, nu + nw);
    h.rightCols(nw).setIdentity();
    const Matrix s = h * cf * h.transpose() + Matrix(sigma.array().square().matrix().asDiagonal());
    const Matrix k = cf * h.transpose() * s.inverse();
    const Matrix ca = (Matrix::Identity(nu + nw, nu + nw) - k * h) * cf;
    const Vector ma = mf + k * (y - h * mf);

    const auto [mean_a, cov_a] = moments(stacked(ensrf_analyze(ens, y, sigma, rng)));
    worst_cov = std::max(worst_cov, (cov_a - ca).norm() / ca.norm());
    worst_mean = std::max(worst_mean, (mean_a - ma).cwiseAbs().maxCoeff());
  }
  return {worst_cov <= 1e-8 && worst_mean <= 1e-10,
          std::to_string(instances) + " instances, covariance rel " + fmt("%.2e", worst_cov) + ", mean residual " +
              fmt("%.2e", worst_mean)};
}

Outcome conservation(const Context&) {
  Rng rng(303);
  double sp_worst = 0.0, src_worst = 0.0, water_worst = 0.0, bound_worst = 0.0;
  const int configs = 100;
  for (int t = 0; t < configs; ++t) {
    {
      Grid2D g(32, 32, 1000.0);
      GaussianPrior prior(Field(g, std::log(5e-13)), 2.0, 1.3);
      const Field u = prior.sample(rng);
      SinglePhaseConfig cfg;
      const int wells = 1 + int(pick(rng, 9));
      for (int l = 0; l < wells; ++l)
        cfg.wells.push_back({"W" + std::to_string(l), 20 + 960 * rng.uniform(), 20 + 960 * rng.uniform(),
                             Schedule::constant(-60.0 + 180.0 * rng.uniform(), 0.0, cfg.horizon)});
      const auto traj = simulate(u, cfg);
      const double storage = cfg.compressibility * cfg.porosity * g.cell_area() * cfg.thickness;
      double net = 0.0, gross = 0.0;
      for (const auto& w : cfg.wells) {
        net += w.rate.value_at(0.0);
        gross += std::abs(w.rate.value_at(0.0));
      }
      for (std::size_t n = 1; n < traj.times.size(); ++n) {
        const double dt = traj.times[n] - traj.times[n - 1];
        const double stored = storage * (traj.pressure[n] - traj.pressure[n - 1]).sum();
        sp_worst = std::max(sp_worst, std::abs(stored + net * dt) / (gross * dt));
      }
    }
    {
      Grid2D g(32, 32, 2000.0);
      GaussianPrior prior(Field(g, std::log(5e-13)), 4.0, 1.3);
      const Field u = prior.sample(rng);
      TwoPhaseConfig cfg;
      std::set<Eigen::Index> used;
      auto place = [&] {
        for (;;) {
          const auto cell = Eigen::Index(pick(rng, std::size_t(g.cell_count())));
          if (used.insert(cell).second) return cell;
        }
      };
      const int injectors = 1 + int(pick(rng, 2)), producers = 2 + int(pick(rng, 4));
      for (int l = 0; l < injectors; ++l) {
        const auto c = place();
        cfg.injectors.push_back({"I" + std::to_string(l), g.x_center(int(c % g.nx)), g.y_center(int(c / g.nx)),
                                 Schedule::constant(500.0 + 2500.0 * rng.uniform(), 0.0, cfg.horizon), {}});
      }
      for (int l = 0; l < producers; ++l) {
        const auto c = place();
        cfg.producers.push_back({"P" + std::to_string(l), g.x_center(int(c % g.nx)), g.y_center(int(c / g.nx)),
                                 Schedule::constant(2.55e7 + 3e6 * rng.uniform(), 0.0, cfg.horizon), {}});
      }
      TwoPhaseSolver solver(u, cfg);
      Vector s = Vector::Constant(g.cell_count(), cfg.initial_saturation);
      const double lo = cfg.relperm.s_min(), hi = cfg.relperm.s_max();
      for (int step = 0; step < 12; ++step) {
        const auto ctl = solver.controls_at(0.0);
        const Vector p = solver.solve_pressure(s, ctl);
        double injected = 0.0, produced = 0.0;
        for (double q : ctl.rates) injected += q;
        for (double q : solver.producer_rates(s, p, ctl)) produced += q;
        src_worst = std::max(src_worst, std::abs(injected + produced) / injected);

        const auto tr = solver.transport(s, p, ctl);
        const double dt = 0.9 * solver.max_stable_dt(tr);
        WellTotals tot = solver.zero_totals();
        const Vector next = solver.advance_saturation(s, tr, dt, &tot);
        const double stored = cfg.porosity * solver.cell_volume() * (next - s).sum();
        double produced_water = 0.0;
        for (double v : tot.produced_water) produced_water += v;
        const double net = tot.total_injected() - produced_water;
        water_worst = std::max(water_worst, std::abs(stored - net) / tot.total_injected());
        bound_worst = std::max({bound_worst, lo - next.minCoeff(), next.maxCoeff() - hi});
        s = next;
      }
    }
  }
  const bool pass = sp_worst <= 1e-8 && src_worst <= 1e-8 && water_worst <= 1e-8 && bound_worst <= 1e-9;
  return {pass, std::to_string(configs) + " configs, single-phase mass " + fmt("%.2e", sp_worst) + ", source " +
                    fmt("%.2e", src_worst) + ", water " + fmt("%.2e", water_worst) + ", bound excess " +
                    fmt("%.2e", std::max(bound_worst, 0.0))};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

Outcome pcn_prior_invariance(const Context&) {
  Grid2D g(32, 32, 1000.0);
  GaussianPrior prior(Field(g, std::log(5e-13)), 2.0, 1.3);
  Rng rng(404);
  const std::size_t kept = 2000, thin = 10;
  auto zero = [](const Vector&) { return 0.0; };
  const auto chain = run_chain(prior.sample_vector(rng), kept * thin, 100, thin, 0.8, prior, zero, rng);
  const Vector var = prior.pointwise_variance();
  const Vector& mean = prior.mean_vector();
  const Eigen::Index probes[5] = {g.index(3, 3), g.index(16, 16), g.index(27, 6), g.index(6, 27), g.index(31, 0)};
  const double critical = 1.6276 / std::sqrt(double(chain.samples.size()));
  double worst = 0.0;
  for (auto k : probes) {
    std::vector<double> x;
    for (const auto& s : chain.samples) x.push_back((s[k] - mean[k]) / std::sqrt(var[k]));
    std::sort(x.begin(), x.end());
    const double n = double(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f = normal_cdf(x[i]);
      d = std::max({d, f - double(i) / n, double(i + 1) / n - f});
    }
    worst = std::max(worst, d);
  }
  const bool pass = worst < critical && chain.acceptance_rate == 1.0;
  return {pass, "KS max " + fmt("%.4f", worst) + " vs critical " + fmt("%.4f", critical) + ", acceptance " +
                    fmt("%.6f", chain.acceptance_rate)};
}

Outcome jacobian_check(const Context&) {
  const auto cfg = load_config(std::string(DALAB_CONFIG_DIR) + "/single_phase_desk.json");
  const auto pb = make_problem(cfg);
  Rng rng(505);
  const Vector u = pb.prior->sample_vector(rng);
  const ForwardModel& model = *pb.model;
  auto g_of = [&](const Vector& v) { return model.evaluate(v); };
  const Matrix q = jacobian_fd(g_of, u, 1e-3);
  const Vector d = rng.normal_vector(u.size()).normalized();
  auto directional = [&](double h) { return Vector((g_of(u + h * d) - g_of(u - h * d)) / (2 * h)); };
  const Vector dd = directional(1e-3);
  const double rel = (q * d - dd).norm() / dd.norm();
  const Vector d1 = directional(0.4), d2 = directional(0.2), d4 = directional(0.1);
  const double ratio = (d1 - d2).norm() / (d2 - d4).norm();
  const bool pass = rel <= 1e-4 && std::abs(ratio - 4.0) <= 0.4;
  return {pass, "directional rel " + fmt("%.2e", rel) + ", halving ratio " + fmt("%.3f", ratio)};
}

Outcome gaspari_cohn_check(const Context&) {
  const double c = 300.0;
  double err = std::abs(gaspari_cohn(0.0, c) - 1.0);
  err = std::max(err, std::abs(gaspari_cohn(c, c) - 5.0 / 24.0));
  for (double r : {2 * c, 2 * c + 1e-9, 3 * c, 1e6}) err = std::max(err, std::abs(gaspari_cohn(r, c)));
  Grid2D g(32, 32, 1000.0);
  Rng rng(606);
  double min_eig = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> wells;
    const int count = 2 + int(pick(rng, 30));
    for (int l = 0; l < count; ++l) wells.emplace_back(1 + 998 * rng.uniform(), 1 + 998 * rng.uniform());
    const auto loc = build_localization(g, wells, 50.0 + 600.0 * rng.uniform());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(loc.rho_ww, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }
  return {err <= 1e-12 && min_eig >= -1e-12,
          "knot error " + fmt("%.1e", err) + ", min eigenvalue of rho_ww " + fmt("%.2e", min_eig)};
}

Outcome buckley_leverett_check(const Context&) {
  const auto t0 = Clock::now();
  const auto r = oracles::buckley_leverett(0.3);
  const double rel = std::abs(r.front_numeric - r.front_oracle) / r.front_oracle;
  const double elapsed = seconds_since(t0);
  return {rel <= 0.05 && elapsed < 60.0, "front " + fmt("%.1f", r.front_numeric) + " m vs " +
                                             fmt("%.1f", r.front_oracle) + " m (" + fmt("%.2f", 100 * rel) +
                                             "%), runtime " + fmt("%.1f", elapsed) + " s"};
}

Outcome desk_trends(const Context& ctx) {
  int loc_enkf = 0, loc_ensrf = 0, srf_sigma = 0, rml_u = 0;
  const auto t0 = Clock::now();
  for (int seed = 1; seed <= ctx.seeds; ++seed) {
    const auto cfg = load_config(std::string(DALAB_CONFIG_DIR) + "/single_phase_desk.json", std::uint64_t(seed));
    const auto rep = run_experiment(cfg, ctx.work / "desk" / ("seed-" + std::to_string(seed)), ctx.cache);
    const auto& enkf = rep.method("enkf");
    const auto& enkf_loc = rep.method("enkf-loc");
    const auto& ensrf = rep.method("ensrf");
    const auto& ensrf_loc = rep.method("ensrf-loc");
    const auto& rml = rep.method("rml");
    loc_enkf += enkf_loc.eps_u < enkf.eps_u && enkf_loc.eps_sigma < enkf.eps_sigma;
    loc_ensrf += ensrf_loc.eps_u < ensrf.eps_u && ensrf_loc.eps_sigma < ensrf.eps_sigma;
    srf_sigma += ensrf.eps_sigma < enkf.eps_sigma;
    rml_u += rml.eps_u <= enkf.eps_u;
    std::cout << "  seed " << seed << ":";
    for (const auto& m : rep.methods)
      std::cout << " " << m.name << " " << fmt("%.3f", m.eps_u) << "/" << fmt("%.3f", m.eps_sigma);
    std::cout << "\n" << std::flush;
  }
  const int majority = ctx.seeds / 2 + 1;
  const bool pass = loc_enkf >= majority && loc_ensrf >= majority && srf_sigma >= majority && rml_u >= majority;
  std::ostringstream os;
  os << "of " << ctx.seeds << " seeds: localization helps enkf " << loc_enkf << ", ensrf " << loc_ensrf
     << "; ensrf sigma below enkf " << srf_sigma << "; rml u at most enkf " << rml_u << "; runtime "
     << fmt("%.0f", seconds_since(t0)) << " s";
  return {pass, os.str()};
}

Outcome gelman_rubin_check(const Context&) {
  const std::vector<double> c = {0.3, -1.2, 2.0, 0.7, 1.1, -0.4};
  const double n = double(c.size());
  const double identical = psrf({c, c, c, c});
  const bool ok_identical = std::abs(identical - std::sqrt((n - 1) / n)) <= 1e-12;

  Rng rng(909);
  std::vector<std::vector<double>> scalar(8);
  std::vector<Matrix> multi;
  for (auto& s : scalar) {
    const Vector v = rng.normal_vector(10000);
    s.assign(v.data(), v.data() + v.size());
  }
  for (int j = 0; j < 8; ++j) multi.push_back(rng.normal_matrix(10000, 5));
  const double r = psrf(scalar), mr = mpsrf(multi);
  const bool pass = ok_identical && r > 0.99 && r < 1.02 && std::abs(mr - 1.0) <= 0.05;
  return {pass, "identical " + fmt("%.6f", identical) + " (expected " + fmt("%.6f", std::sqrt((n - 1) / n)) +
                    "), iid psrf " + fmt("%.4f", r) + ", iid mpsrf " + fmt("%.4f", mr)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DALAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::pair<std::string, std::string>> output_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".json" || ext == ".csv"))
      out.emplace_back(fs::relative(e.path(), root).string(), read_text(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

json shrink(json d, int cells, const json& methods) {
  d["name"] = d["name"].get<std::string>() + "_rerun";
  d["grid"]["nx"] = cells;
  d["grid"]["ny"] = cells;
  d["mcmc"] = {{"chains", 2}, {"steps", 200},         {"burn_in", 50},     {"thin", 10},
               {"beta", 0.2}, {"diagnostic_modes", 4}, {"kept_samples", 6}, {"checkpoints", 2}};
  d["methods"] = methods;
  d["forecast"]["prior_samples"] = 3;
  return d;
}

Outcome cli_determinism(const Context& ctx) {
  const json desk_methods = json::array({{{"name", "map"}, {"kind", "map"}},
                                         {{"name", "lmap"}, {"kind", "lmap"}, {"ensemble_size", 8}},
                                         {{"name", "rml"}, {"kind", "rml"}, {"ensemble_size", 4}},
                                         {{"name", "enkf"}, {"kind", "enkf"}, {"ensemble_size", 8}},
                                         {{"name", "ensrf-loc"}, {"kind", "ensrf"}, {"ensemble_size", 8},
                                          {"localization", 300.0}}});
  const json flow_methods = json::array({{{"name", "enkf-loc"}, {"kind", "enkf"}, {"ensemble_size", 16},
                                          {"localization", 600.0}},
                                         {{"name", "ensrf-loc"}, {"kind", "ensrf"}, {"ensemble_size", 16},
                                          {"localization", 600.0}}});
  const std::vector<std::pair<std::string, json>> cases = {
      {"single_phase", shrink(read_json(std::string(DALAB_CONFIG_DIR) + "/single_phase_desk.json"), 10, desk_methods)},
      {"two_phase", shrink(read_json(std::string(DALAB_CONFIG_DIR) + "/two_phase_small.json"), 16, flow_methods)}};

  std::size_t files = 0;
  for (const auto& [label, doc] : cases) {
    const fs::path root = ctx.work / "rerun" / label;
    fs::remove_all(root);
    fs::create_directories(root);
    write_json(root / "config.json", doc);
    std::vector<std::vector<std::pair<std::string, std::string>>> trees;
    for (const char* run : {"a", "b"}) {
      const fs::path out = root / run;
      const std::string common = " --config " + (root / "config.json").string() + " --out " + out.string();
      std::vector<std::string> stages = {"generate", "mcmc"};
      for (const auto& m : doc["methods"]) stages.push_back("approx --method " + m["name"].get<std::string>());
      for (const char* s : {"evaluate", "forecast", "report"}) stages.emplace_back(s);
      for (const auto& s : stages) {
        const int code = run_cli(s + common);
        if (code != 0) return {false, label + " run " + run + ": '" + s + "' exited " + std::to_string(code)};
      }
      trees.push_back(output_bytes(out));
    }
    if (trees[0].empty()) return {false, label + ": no outputs"};
    if (trees[0].size() != trees[1].size()) return {false, label + ": file sets differ"};
    for (std::size_t i = 0; i < trees[0].size(); ++i)
      if (trees[0][i] != trees[1][i]) return {false, label + ": " + trees[0][i].first + " differs"};
    files += trees[0].size();
  }
  return {true, std::to_string(files) + " JSON/CSV files byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Context ctx;
  std::string work = "acceptance_work", cache;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--cache", cache, "gold-standard cache directory");
  app.add_option("--seeds", ctx.seeds, "seeds for the desk-scale trends")->check(CLI::Range(1, 100));
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  ctx.work = fs::absolute(work);
  if (!cache.empty()) ctx.cache = fs::absolute(cache);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"linear-Gaussian oracle", linear_gaussian_oracle},
      {"EnSRF covariance and mean exactness", ensrf_exactness},
      {"conservation suite", conservation},
      {"pCN with zero potential samples the prior", pcn_prior_invariance},
      {"finite-difference Jacobian consistency", jacobian_check},
      {"Gaspari-Cohn taper", gaspari_cohn_check},
      {"Buckley-Leverett front", buckley_leverett_check},
      {"desk-scale trends", desk_trends},
      {"Gelman-Rubin diagnostics", gelman_rubin_check},
      {"CLI rerun determinism", cli_determinism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << " ("
              << o.detail << ")\n"
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
