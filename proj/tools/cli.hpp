#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oscid/afp.hpp"
#include "oscid/ident.hpp"
#include "oscid/pipeline.hpp"
#include "oscid/sde_sim.hpp"

namespace oscid::cli {

struct SweepSpec {
  std::string axis = "epsilon";  // or "alpha"
  double start = 0.0;
  double stop = 0.0;
  double step = 0.0;

  /// start, start + step, ... up to stop (inclusive within step / 1000).
  std::vector<double> values() const;
};

struct RunConfig {
  OscillatorModel model{{0.1, -0.1, 0.1}, 6.283185307179586};
  SimConfig sim;
  AnalysisOptions analysis;
  PdeConfig pde;
  StopCriteria stop;
  Method method = Method::kProposed;
  std::vector<Method> methods{Method::kExtrapolation, Method::kNelderMead, Method::kProposed};
  std::optional<SweepSpec> sweep;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> input;
  std::optional<double> segment;
  std::optional<Theta> theta;
  int jobs = 0;  // 0: all hardware threads
};

/// Strict: any key not in the schema is a ConfigError naming its path. A
/// sidecar written by this tool is accepted too (its "config" member is used).
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// "a..b" (inclusive) or a single integer.
std::vector<std::uint64_t> parse_seed_range(const std::string& text);
/// "eps,alpha,d".
Theta parse_theta(const std::string& text);

/// Checks module invariants of every block that the command uses.
void validate(const RunConfig& cfg, const std::string& command);

struct Options {
  bool force = false;
};

void cmd_simulate(const RunConfig& cfg, const Options& opts);
void cmd_identify(const RunConfig& cfg, const Options& opts);
void cmd_sweep(const RunConfig& cfg, const Options& opts);
void cmd_compare(const RunConfig& cfg, const Options& opts);
void cmd_report(const RunConfig& cfg, const Options& opts);

/// Structured description of an error for stderr.
nlohmann::json error_json(const std::exception& e);

/// Parses arguments, dispatches, maps exceptions to exit codes.
int run(int argc, char** argv);

}  // namespace oscid::cli
