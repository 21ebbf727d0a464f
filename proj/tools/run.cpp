#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <tbb/global_control.h>

#include "cli.hpp"

namespace oscid::cli {
namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string input;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string method;
  std::optional<double> segment;
  std::optional<int> jobs;
  std::string theta;
  bool force = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file (or a sidecar written by a previous run)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "single seed");
  app->add_option("--seeds", f.seeds, "inclusive seed range a..b");
  app->add_option("--method", f.method, "prop, nm or extrap");
  app->add_option("--segment", f.segment, "split the input into windows of this many seconds");
  app->add_option("--jobs", f.jobs, "worker threads (0: all)");
  app->add_flag("--force", f.force, "overwrite existing outputs");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (!f.input.empty()) cfg.input = f.input;
  if (!f.seeds.empty()) cfg.seeds = parse_seed_range(f.seeds);
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.method.empty()) cfg.method = parse_method(f.method);
  if (f.segment) cfg.segment = *f.segment;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (!f.theta.empty()) cfg.theta = parse_theta(f.theta);
  return cfg;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Identify stochastic oscillator parameters from output-only time series"};
  app.require_subcommand(1);
  Flags f;
  auto* sim = app.add_subcommand("simulate", "simulate the oscillator, one CSV per seed");
  auto* ident = app.add_subcommand("identify", "identify (eps, alpha, d) from a time,value CSV");
  auto* sweep = app.add_subcommand("sweep", "simulate and identify over a parameter sweep");
  auto* compare = app.add_subcommand("compare", "Nelder-Mead versus the proposed optimizer on one record");
  auto* report = app.add_subcommand("report", "deterministic versus random forcing scales");
  for (auto* sub : {sim, ident, sweep, compare, report}) add_common(sub, f);
  for (auto* sub : {ident, compare, report}) sub->add_option("input", f.input, "time,value CSV");
  report->add_option("--theta", f.theta, "eps,alpha,d");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::json j = {{"error", {{"kind", "usage_error"}, {"message", e.what()}, {"exit_code", 2}}}};
    std::cerr << j.dump() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    const RunConfig cfg = resolve(f);
    std::unique_ptr<tbb::global_control> limit;
    if (cfg.jobs > 0) {
      limit = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                    static_cast<std::size_t>(cfg.jobs));
    }
    const Options opts{f.force};
    if (*sim) cmd_simulate(cfg, opts);
    if (*ident) cmd_identify(cfg, opts);
    if (*sweep) cmd_sweep(cfg, opts);
    if (*compare) cmd_compare(cfg, opts);
    if (*report) cmd_report(cfg, opts);
  } catch (const std::exception& e) {
    const auto err = error_json(e);
    std::cerr << nlohmann::json{{"error", err}}.dump() << "\n";
    return err["exit_code"].get<int>();
  }
  return static_cast<int>(ExitCode::kSuccess);
}

}  // namespace oscid::cli
