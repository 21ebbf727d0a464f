#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oscid/afp.hpp"
#include "oscid/errors.hpp"
#include "oscid/km_estimator.hpp"
#include "oscid/sde_sim.hpp"

namespace oscid {

/// rho = D_hat - D(theta), ordered (n, i, j) lexicographically. Missing
/// entries are zero with zero weight.
struct Residual {
  Eigen::VectorXd entries;
  Eigen::VectorXd weights;
  std::uint64_t token = 0;  // value of the evaluation counter for this call
};

using EvalCounter = std::atomic<std::uint64_t>;

/// Must be safe to call concurrently.
using ResidualFn = std::function<Residual(const Theta&)>;

/// One residual evaluation; bumps `counter` by exactly one when given.
Residual residual(const Theta& theta, double omega, const KmEstimates& km, const PdeConfig& cfg,
                  EvalCounter* counter = nullptr);

/// Binds the data side and counts every call.
class ResidualEvaluator {
 public:
  ResidualEvaluator(KmEstimates km, double omega, PdeConfig cfg);

  Residual operator()(const Theta& theta) const;
  ResidualFn function() const;
  std::uint64_t count() const noexcept { return counter_->load(); }
  const KmEstimates& km() const noexcept { return km_; }

 private:
  KmEstimates km_;
  double omega_;
  PdeConfig cfg_;
  std::shared_ptr<EvalCounter> counter_;
};

/// sum(w rho^2) / (2 N_a N_tau).
double cost(const Residual& res, std::size_t n_a, std::size_t n_tau);
/// Same normalization with 2 N_a N_tau taken as the residual length.
double cost(const Residual& res);

/// Delta = max(|theta_k| / 10, 1e-5) per coordinate.
std::array<double, 3> fd_steps(const Theta& theta);

class JacobianError : public NumericalError {
 public:
  JacobianError(int coordinate, const std::string& what);
  int coordinate() const noexcept { return coordinate_; }
  const char* kind() const noexcept override { return "jacobian_failure"; }

 private:
  int coordinate_;
};

const char* coordinate_name(int k);

/// Forward differences around theta given the cached rho(theta). The three
/// perturbed residuals are evaluated concurrently.
Eigen::MatrixXd fd_jacobian(const Theta& theta, const Residual& rho, const ResidualFn& fn);
Eigen::MatrixXd fd_jacobian(const Theta& theta, double omega, const KmEstimates& km, const PdeConfig& cfg,
                            EvalCounter* counter = nullptr);

struct StopCriteria {
  double theta_tol = 1e-4;
  double cost_tol = 1e-4;
  std::size_t max_iterations = 200;     // Levenberg-Marquardt iterations
  std::size_t max_backtracks = 30;      // cap on m in lambda = 2^m lambda_k
  std::size_t nm_max_iterations = 1000; // simplex iterations
};

struct LmState {
  Theta theta;
  double lambda = 1.0;  // NaN for simplex snapshots
  double cost = 0.0;
  std::size_t iteration = 0;
  std::size_t residual_evals = 0;
  std::size_t backtracks = 0;  // m used to reach this state (0 if none)
};

/// ||dtheta|| / (1 + ||theta||) < theta_tol and |dE| / (1 + |E|) < cost_tol.
bool stop_check(const LmState& prev, const LmState& next, const StopCriteria& stop = {});

struct FitReport {
  std::string method;
  Theta theta_hat;
  double cost_min = 0.0;
  std::size_t iterations = 0;
  std::size_t residual_evals = 0;
  bool converged = false;
  std::vector<LmState> trajectory;
  std::string message;
  std::vector<double> eval_costs;  // cost of every evaluation, in order (non-finite on failure)
};

/// Derivative-free Levenberg-Marquardt with halving / doubling damping.
/// Throws if rho(theta0) itself cannot be evaluated.
FitReport lm_solve(const Theta& theta0, const ResidualFn& fn, const StopCriteria& stop = {});
FitReport lm_solve(const Theta& theta0, double omega, const KmEstimates& km, const PdeConfig& cfg,
                   const StopCriteria& stop = {});

using CostFn = std::function<double(const Theta&)>;

/// Simplex search (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
/// A cost evaluation that throws NumericalError counts as +inf.
FitReport nelder_mead_solve(const Theta& theta0, const CostFn& fn, const StopCriteria& stop = {});
FitReport nelder_mead_solve(const Theta& theta0, double omega, const KmEstimates& km, const PdeConfig& cfg,
                            const StopCriteria& stop = {});

inline constexpr Theta kFallbackTheta{0.0, -0.01, 1e-3};

struct ExtrapolationFit {
  Theta theta;
  std::vector<std::size_t> used_bins;
  std::vector<double> c0_drift;      // signed exp(c0) of the drift fit, per used bin
  std::vector<double> c0_diffusion;  // exp(c0) of the diffusion fit, per used bin
};

/// Exponential tau-extrapolation of D_hat toward tau = 0 per bin, then
/// d from the diffusion intercepts and (eps, alpha) by least squares.
/// Throws InitializerError when fewer than two bins are usable.
ExtrapolationFit extrapolation_fit(const KmEstimates& km, double omega);
Theta extrapolation_guess(const KmEstimates& km, double omega);

struct NoiseBalance {
  std::vector<double> lhs;  // |x'' - (eps + alpha x^2) x' + omega^2 x| at interior samples
  double mean_abs_lhs = 0.0;
  double noise_scale = 0.0;  // sqrt(2 d)
  double ratio = 0.0;        // mean|LHS| / sqrt(2 d); +inf when d = 0
  bool ratio_infinite = false;
  double amplitude_mean = 0.0;
  double amplitude_std = 0.0;
  double amplitude_rel_dev = 0.0;  // std / mean
};

NoiseBalance noise_balance_report(const TimeSeries& ts, const Theta& theta, double omega);

}  // namespace oscid
