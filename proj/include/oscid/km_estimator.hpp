#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "oscid/signal.hpp"

namespace oscid {

/// Empirical P(A, t + tau | a_i, t) on a regular A lattice. The lattice spans
/// the observed envelope range padded by one zero-mass bin on each side.
struct ConditionalDensity {
  double source_bin = 0.0;
  double lag = 0.0;
  std::vector<double> a_centers;
  std::vector<double> mass;
  std::size_t pair_count = 0;

  /// Trapezoid rule over a_centers of (A - source_bin)^n * mass.
  double moment(int n) const;
};

/// Histogram of a(t + tau) over all unflagged pairs whose a(t) falls in the
/// bin of width `bin_width` centred at a_i, with `a_bins` bins across the
/// observed range.
ConditionalDensity conditional_density(const EnvelopeSeries& env, double a_i, double tau,
                                       std::size_t a_bins, double bin_width);

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Data-side finite-time Kramers-Moyal coefficients on the grid. Entries with
/// no pairs are NaN and carry zero weight.
struct KmEstimates {
  SampleGrid grid;
  Eigen::MatrixXd d1_hat;   // N_a x N_tau
  Eigen::MatrixXd d2_hat;   // N_a x N_tau
  Eigen::MatrixXd weights;  // occupancy frequency per lag; columns sum to 1
  CountMatrix pair_counts;

  const Eigen::MatrixXd& d_hat(int n) const { return n == 1 ? d1_hat : d2_hat; }
  bool missing(Eigen::Index i, Eigen::Index j) const { return pair_counts(i, j) == 0; }
  double missing_fraction() const;
};

void validate(const KmEstimates& km);

struct KmOptions {
  // Resolution of the A lattice relative to the conditioning bin width.
  std::size_t density_bins_per_grid_bin = 4;
  // Reject estimates when more than this fraction of entries has no data.
  double max_missing_fraction = 0.5;
};

/// D^(n)(i, j) = 1/(n! tau_j) * integral (A - a_i)^n P(A | a_i, tau_j) dA for
/// n = 1, 2, plus per-lag occupancy weights.
KmEstimates finite_time_km(const EnvelopeSeries& env, const SampleGrid& grid, const KmOptions& opts = {});

}  // namespace oscid
