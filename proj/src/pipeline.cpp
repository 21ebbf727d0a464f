#include "oscid/pipeline.hpp"

#include <cmath>
#include <limits>

namespace oscid {

const char* method_name(Method m) noexcept {
  switch (m) {
    case Method::kProposed: return "prop";
    case Method::kNelderMead: return "nm";
    case Method::kExtrapolation: return "extrap";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "prop") return Method::kProposed;
  if (name == "nm") return Method::kNelderMead;
  if (name == "extrap") return Method::kExtrapolation;
  throw ConfigError("unknown method '" + name + "' (expected prop, nm or extrap)");
}

void validate(const AnalysisOptions& opts) {
  if (opts.omega && !(std::isfinite(*opts.omega) && *opts.omega > 0.0)) throw ConfigError("omega must be positive");
  if (opts.n_a < 2) throw ConfigError("n_a must be at least 2");
  if (opts.n_tau < 2) throw ConfigError("n_tau must be at least 2");
  if (opts.km.density_bins_per_grid_bin < 1) throw ConfigError("density_bins_per_grid_bin must be at least 1");
  if (!(opts.km.max_missing_fraction >= 0.0 && opts.km.max_missing_fraction <= 1.0)) {
    throw ConfigError("max_missing_fraction must lie in [0, 1]");
  }
  if (opts.band_pass && !(opts.band_pass->half_width > 0.0 && opts.band_pass->f_center > 0.0)) {
    throw ConfigError("band_pass needs positive f_center and half_width");
  }
}

namespace {

struct Stage {
  TauSelection tau;
  KmEstimates km;
  Theta theta0;
  bool fallback = false;
  std::string message;
};

Stage build(const EnvelopeSeries& env, const std::vector<double>& amplitudes, GrowthHint hint, double omega,
            const AnalysisOptions& opts) {
  Stage s;
  s.tau = select_tau_grid(env, hint, opts.n_tau);
  s.km = finite_time_km(env, SampleGrid{amplitudes, s.tau.taus}, opts.km);
  try {
    s.theta0 = extrapolation_guess(s.km, omega);
  } catch (const InitializerError& e) {
    s.theta0 = kFallbackTheta;
    s.fallback = true;
    s.message = std::string("extrapolation failed, using the default start: ") + e.what();
  }
  return s;
}

}  // namespace

Prepared prepare(const TimeSeries& input, const AnalysisOptions& opts) {
  validate(opts);
  validate(input);
  TimeSeries filtered;
  const TimeSeries* ts = &input;
  if (opts.band_pass) {
    filtered = band_pass(input, opts.band_pass->f_center, opts.band_pass->half_width);
    ts = &filtered;
  }

  Prepared p;
  p.omega = opts.omega ? *opts.omega : dominant_frequency(*ts);
  const EnvelopeSeries env = analytic_envelope(*ts, p.omega);
  const std::vector<double> amplitudes = select_amplitude_grid(env, opts.n_a);

  p.hint = opts.tau_hint.value_or(GrowthHint::kPositive);
  Stage s = build(env, amplitudes, p.hint, p.omega, opts);
  if (!opts.tau_hint && (s.fallback || s.theta0.epsilon <= 0.0)) {
    // Below the bifurcation the envelope decorrelates slowly and the 0.97
    // threshold picks lags too short to show the drift.
    p.hint = GrowthHint::kNonPositive;
    s = build(env, amplitudes, p.hint, p.omega, opts);
  }

  // A non-saturating start (alpha >= 0) sends the adjoint solves into
  // explosive territory; keep the sign the model family requires.
  if (!s.fallback && s.theta0.alpha >= 0.0) {
    s.message = "initial alpha " + std::to_string(s.theta0.alpha) + " replaced by the default";
    s.theta0.alpha = kFallbackTheta.alpha;
  }
  if (!s.fallback && !(s.theta0.d > 0.0)) {
    s.message = "initial d " + std::to_string(s.theta0.d) + " replaced by the default";
    s.theta0.d = kFallbackTheta.d;
  }

  p.tau = std::move(s.tau);
  p.km = std::move(s.km);
  p.theta0 = s.theta0;
  p.fallback = s.fallback;
  p.init_message = std::move(s.message);
  return p;
}

FitReport run_method(Method method, const Prepared& prep, const PdeConfig& pde, const StopCriteria& stop) {
  switch (method) {
    case Method::kProposed: return lm_solve(prep.theta0, prep.omega, prep.km, pde, stop);
    case Method::kNelderMead: return nelder_mead_solve(prep.theta0, prep.omega, prep.km, pde, stop);
    case Method::kExtrapolation: break;
  }
  FitReport rep;
  rep.method = method_name(method);
  rep.theta_hat = prep.theta0;
  rep.residual_evals = 1;
  rep.cost_min = std::numeric_limits<double>::infinity();
  try {
    const ResidualEvaluator eval(prep.km, prep.omega, pde);
    rep.cost_min = cost(eval(prep.theta0));
    rep.converged = !prep.fallback;
    rep.message = prep.fallback ? prep.init_message : "extrapolation estimate";
  } catch (const NumericalError& e) {
    rep.message = std::string("cost evaluation failed: ") + e.what();
  }
  rep.eval_costs.push_back(rep.cost_min);
  rep.trajectory.push_back({rep.theta_hat, std::numeric_limits<double>::quiet_NaN(), rep.cost_min, 0, 1, 0});
  return rep;
}

}  // namespace oscid
