#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oscid/afp.hpp"
#include "oscid/ident.hpp"
#include "oscid/km_estimator.hpp"
#include "oscid/signal.hpp"

namespace oscid {

enum class Method { kProposed, kNelderMead, kExtrapolation };

/// "prop", "nm", "extrap".
const char* method_name(Method m) noexcept;
/// Throws ConfigError for unknown names.
Method parse_method(const std::string& name);

struct BandPassOptions {
  double f_center = 0.0;  // Hz
  double half_width = 0.0;
};

struct AnalysisOptions {
  std::optional<double> omega;           // carrier frequency override, rad / time
  std::optional<GrowthHint> tau_hint;    // unset: chosen from the initial guess
  std::size_t n_a = kDefaultNA;
  std::size_t n_tau = kDefaultNTau;
  KmOptions km;
  std::optional<BandPassOptions> band_pass;
};

void validate(const AnalysisOptions& opts);

/// Everything the optimizers need, derived from one record.
struct Prepared {
  double omega = 0.0;
  GrowthHint hint = GrowthHint::kPositive;
  TauSelection tau;
  KmEstimates km;
  Theta theta0;
  bool fallback = false;     // theta0 is the documented default
  std::string init_message;  // why the default was used, or adjustments made
};

/// Envelope, grids, KM estimates and the initial guess. With no tau hint the
/// positive-growth threshold is tried first and the grid is rebuilt with the
/// non-positive threshold when the initial guess has eps <= 0.
Prepared prepare(const TimeSeries& ts, const AnalysisOptions& opts);

/// Runs one method from prep.theta0. The extrapolation "method" reports the
/// initial guess with a single residual evaluation for its cost.
FitReport run_method(Method method, const Prepared& prep, const PdeConfig& pde, const StopCriteria& stop);

}  // namespace oscid
