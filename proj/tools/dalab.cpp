// Command-line driver for the benchmark experiments.
//
//   dalab generate --config c.json --out run/
//   dalab mcmc     --config c.json --out run/ --cache cache/
//   dalab approx   --config c.json --out run/ --method enkf-loc
//   dalab evaluate | forecast | report ...
//
// Exit codes: 0 success, 1 bad usage or config, 2..7 failure in generate,
// mcmc, approx, evaluate, forecast, report.

#include "dalab/harness/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

enum Exit { ok = 0, usage = 1, generate = 2, mcmc = 3, approx = 4, evaluate = 5, forecast = 6, report = 7 };

}  // namespace

int main(int argc, char** argv) {
  using namespace dalab::harness;

  CLI::App app{"Data assimilation benchmark driver"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<std::string> cache_dir;
  std::string method;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--out", out_dir, "artifact directory");
    sub->add_option("--cache", cache_dir, "gold-standard cache directory (used by mcmc)");
  };
  auto* gen = app.add_subcommand("generate", "draw the truth and synthesize data");
  auto* chains = app.add_subcommand("mcmc", "run (or load) the pCN gold standard");
  auto* apx = app.add_subcommand("approx", "run one approximate method");
  auto* eval = app.add_subcommand("evaluate", "relative errors against the gold standard");
  auto* fc = app.add_subcommand("forecast", "forecast quantiles for every sample set");
  auto* rep = app.add_subcommand("report", "assemble report.json and the CSV tables");
  for (auto* s : {gen, chains, apx, eval, fc, rep}) common(s);
  apx->add_option("--method", method, "method name from the config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? Exit::ok : Exit::usage;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, seed);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return Exit::usage;
  }

  auto stage = [&](Exit code, auto&& fn) {
    try {
      fn();
      return int(Exit::ok);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return int(code);
    }
  };

  const fs::path out(out_dir);
  if (*gen) return stage(Exit::generate, [&] { stage_generate(cfg, out); });
  if (*chains) {
    std::optional<fs::path> cache;
    if (cache_dir) cache = fs::path(*cache_dir);
    return stage(Exit::mcmc, [&] { stage_mcmc(cfg, out, cache); });
  }
  if (*apx) {
    try {
      cfg.method(method);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return Exit::usage;
    }
    return stage(Exit::approx, [&] { stage_approx(cfg, out, method); });
  }
  if (*eval) return stage(Exit::evaluate, [&] { stage_evaluate(cfg, out); });
  if (*fc) return stage(Exit::forecast, [&] { stage_forecast(cfg, out); });
  if (*rep) return stage(Exit::report, [&] { stage_report(cfg, out); });
  return Exit::usage;
}
