#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oscid/errors.hpp"
#include "oscid/sde_sim.hpp"
#include "oscid/signal.hpp"

namespace oscid {

struct ModelCoeffs {
  Theta theta;
  double omega = 0.0;
};

struct DriftDiffusion {
  double d1 = 0.0;  // amplitude / time
  double d2 = 0.0;  // amplitude^2 / time
};

/// D1(a) = eps a / 2 + alpha a^3 / 8 + d / (2 omega^2 a), D2 = d / (2 omega^2).
DriftDiffusion model_coeffs(const ModelCoeffs& mc, double a);

struct PdeConfig {
  double a_max_factor = 1.5;
  int n_cells = 400;
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;
  std::vector<double> checkpoint_times;
  std::size_t max_steps = 200000;
};

void validate(const PdeConfig& cfg);

/// Raised when the adjoint solve cannot proceed (step-size underflow,
/// non-finite state, step budget exhausted). Carries theta and the time
/// reached; model_finite_time_km also tags the moment order and bin.
class StiffnessError : public NumericalError {
 public:
  StiffnessError(const Theta& theta, double time, const std::string& what);

  const Theta& theta() const noexcept { return theta_; }
  double time() const noexcept { return time_; }
  std::optional<int> order() const noexcept { return order_; }
  std::optional<std::size_t> bin() const noexcept { return bin_; }
  StiffnessError tagged(int n, std::size_t i) const;
  const char* kind() const noexcept override { return "stiffness"; }

 private:
  Theta theta_;
  double time_;
  std::optional<int> order_;
  std::optional<std::size_t> bin_;
};

struct AfpSolution {
  int n = 1;
  double a_center = 0.0;
  std::vector<double> values;  // P(a_center, t_j) for each checkpoint t_j
  std::size_t steps = 0;
  std::size_t rejected_steps = 0;
};

/// Solves dP/dt = D1(A) dP/dA + D2 d2P/dA2 on (0, A_max] with P(A, 0) =
/// (A - a_center)^n in one pass, sampling P(a_center, t) at every checkpoint.
/// A_max = a_max_factor * max(a_extent, 2 a_center); pass the largest grid
/// amplitude as `a_extent`.
AfpSolution solve_afp(const ModelCoeffs& mc, int n, double a_center, const PdeConfig& cfg,
                      double a_extent = 0.0);

struct ModelKm {
  Eigen::MatrixXd d1;  // N_a x N_tau
  Eigen::MatrixXd d2;

  const Eigen::MatrixXd& d(int n) const { return n == 1 ? d1 : d2; }
};

/// Model-side finite-time coefficients P(a_i, tau_j) / (n! tau_j), one
/// adjoint solve per (n, i) with all tau_j as checkpoints. The 2 N_a solves
/// run concurrently; the result does not depend on scheduling.
ModelKm model_finite_time_km(const ModelCoeffs& mc, const SampleGrid& grid, const PdeConfig& cfg);

}  // namespace oscid
