#include "oscid/km_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <tbb/parallel_for.h>

#include "oscid/errors.hpp"

namespace oscid {
namespace {

// Regular A lattice over the observed range, padded by one empty bin per side.
struct Lattice {
  double lo = 0.0;
  double width = 0.0;
  std::size_t bins = 0;  // interior bins

  std::size_t index(double a) const {
    if (width <= 0.0) return 1;
    const double u = (a - lo) / width;
    const auto k = static_cast<std::ptrdiff_t>(std::floor(u));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(bins) - 1)) + 1;
  }
  double center(std::size_t padded) const {
    return lo + (static_cast<double>(padded) - 0.5) * width;
  }
};

std::pair<double, double> usable_range(const EnvelopeSeries& env) {
  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  if (last <= first) throw InsufficientDataError("no usable envelope samples");
  const auto [lo, hi] = std::minmax_element(env.amplitudes.begin() + static_cast<std::ptrdiff_t>(first),
                                            env.amplitudes.begin() + static_cast<std::ptrdiff_t>(last));
  return {*lo, *hi};
}

Lattice make_lattice(const EnvelopeSeries& env, std::size_t a_bins, double bin_width) {
  const auto [lo, hi] = usable_range(env);
  Lattice lat;
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    // Constant envelope: a single interior bin centred on the value.
    const double w = bin_width > 0.0 ? bin_width : 1.0;
    lat.lo = lo - 0.5 * w;
    lat.width = w;
    lat.bins = 1;
    return lat;
  }
  lat.lo = lo;
  lat.bins = std::max<std::size_t>(a_bins, 1);
  lat.width = (hi - lo) / static_cast<double>(lat.bins);
  return lat;
}

// Conditioning bin index of amplitude a, or -1 when outside the grid.
std::ptrdiff_t conditioning_bin(double a, double lo, double h, std::size_t n) {
  const double u = (a - lo) / h;
  if (u < 0.0) return -1;
  auto k = static_cast<std::ptrdiff_t>(std::floor(u));
  if (k == static_cast<std::ptrdiff_t>(n) && u <= static_cast<double>(n) * (1.0 + 1e-12)) --k;
  return k < static_cast<std::ptrdiff_t>(n) ? k : -1;
}

}  // namespace

double ConditionalDensity::moment(int n) const {
  if (a_centers.size() < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < a_centers.size(); ++k) {
    const double h = a_centers[k + 1] - a_centers[k];
    const double f0 = std::pow(a_centers[k] - source_bin, n) * mass[k];
    const double f1 = std::pow(a_centers[k + 1] - source_bin, n) * mass[k + 1];
    acc += 0.5 * h * (f0 + f1);
  }
  return acc;
}

ConditionalDensity conditional_density(const EnvelopeSeries& env, double a_i, double tau, std::size_t a_bins,
                                       double bin_width) {
  if (!(bin_width > 0.0)) throw DataError("conditioning bin width must be positive");
  const SampleGrid probe{{a_i, a_i + bin_width}, {tau, tau + env.dt}};
  const std::size_t lag = probe.lag_samples(env.dt).front();
  const Lattice lat = make_lattice(env, a_bins, bin_width);

  ConditionalDensity cd;
  cd.source_bin = a_i;
  cd.lag = tau;
  cd.a_centers.resize(lat.bins + 2);
  for (std::size_t k = 0; k < cd.a_centers.size(); ++k) cd.a_centers[k] = lat.center(k);
  std::vector<std::size_t> counts(lat.bins + 2, 0);

  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  const double lo = a_i - 0.5 * bin_width;
  for (std::size_t t = first; t + lag < last; ++t) {
    if (conditioning_bin(env.amplitudes[t], lo, bin_width, 1) != 0) continue;
    ++counts[lat.index(env.amplitudes[t + lag])];
    ++cd.pair_count;
  }
  cd.mass.assign(counts.size(), 0.0);
  if (cd.pair_count > 0) {
    // Interior bins share the lattice width and the padded ends carry no
    // mass, so the trapezoid integral of the density is exactly one.
    const double norm = 1.0 / (static_cast<double>(cd.pair_count) * lat.width);
    for (std::size_t k = 0; k < counts.size(); ++k) cd.mass[k] = static_cast<double>(counts[k]) * norm;
  }
  return cd;
}

double KmEstimates::missing_fraction() const {
  if (pair_counts.size() == 0) return 1.0;
  return static_cast<double>((pair_counts.array() == 0).count()) / static_cast<double>(pair_counts.size());
}

void validate(const KmEstimates& km) {
  validate(km.grid);
  const auto na = static_cast<Eigen::Index>(km.grid.n_a());
  const auto nt = static_cast<Eigen::Index>(km.grid.n_tau());
  for (const auto* m : {&km.d1_hat, &km.d2_hat, &km.weights}) {
    if (m->rows() != na || m->cols() != nt) throw DataError("KM matrices do not match the grid shape");
  }
  if (km.pair_counts.rows() != na || km.pair_counts.cols() != nt) {
    throw DataError("pair-count matrix does not match the grid shape");
  }
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < nt; ++j) {
      const double w = km.weights(i, j);
      if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("KM weights must be finite and nonnegative");
      if (km.missing(i, j) && w != 0.0) throw DataError("missing KM entries must carry zero weight");
      if (!km.missing(i, j) && (!std::isfinite(km.d1_hat(i, j)) || !std::isfinite(km.d2_hat(i, j)))) {
        throw DataError("populated KM entries must be finite");
      }
    }
  }
}

KmEstimates finite_time_km(const EnvelopeSeries& env, const SampleGrid& grid, const KmOptions& opts) {
  validate(grid);
  const std::size_t na = grid.n_a();
  const std::size_t nt = grid.n_tau();
  const auto lags = grid.lag_samples(env.dt);
  const double h = grid.bin_width();
  const double cond_lo = grid.amplitudes.front() - 0.5 * h;

  const auto [lo, hi] = usable_range(env);
  const auto a_bins = static_cast<std::size_t>(
      std::max(1.0, std::ceil((hi - lo) / h * static_cast<double>(opts.density_bins_per_grid_bin) - 1e-9)));
  const Lattice lat = make_lattice(env, a_bins, h);

  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  const std::size_t m = last - first;

  // Per-sample conditioning bin and quantized lattice position.
  std::vector<std::ptrdiff_t> cond(m);
  std::vector<double> quantized(m);
  for (std::size_t t = 0; t < m; ++t) {
    const double a = env.amplitudes[first + t];
    cond[t] = conditioning_bin(a, cond_lo, h, na);
    quantized[t] = lat.center(lat.index(a));
  }

  KmEstimates km;
  km.grid = grid;
  const auto nai = static_cast<Eigen::Index>(na);
  const auto nti = static_cast<Eigen::Index>(nt);
  km.d1_hat.setConstant(nai, nti, std::numeric_limits<double>::quiet_NaN());
  km.d2_hat.setConstant(nai, nti, std::numeric_limits<double>::quiet_NaN());
  km.weights.setZero(nai, nti);
  km.pair_counts.setZero(nai, nti);

  // The trapezoid integral over the padded histogram reduces exactly to the
  // pair average of (center(A) - a_i)^n, which is what is accumulated here.
  tbb::parallel_for(std::size_t{0}, nt, [&](std::size_t j) {
    const std::size_t lag = lags[j];
    std::vector<double> s1(na, 0.0), s2(na, 0.0);
    std::vector<std::int64_t> count(na, 0);
    for (std::size_t t = 0; t + lag < m; ++t) {
      const auto i = cond[t];
      if (i < 0) continue;
      const double dA = quantized[t + lag] - grid.amplitudes[static_cast<std::size_t>(i)];
      s1[static_cast<std::size_t>(i)] += dA;
      s2[static_cast<std::size_t>(i)] += dA * dA;
      ++count[static_cast<std::size_t>(i)];
    }
    std::int64_t total = 0;
    for (auto c : count) total += c;
    const double tau = grid.taus[j];
    const auto jj = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < na; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      km.pair_counts(ii, jj) = count[i];
      if (count[i] == 0) continue;
      const double c = static_cast<double>(count[i]);
      km.d1_hat(ii, jj) = s1[i] / (c * tau);
      km.d2_hat(ii, jj) = s2[i] / (2.0 * c * tau);
      km.weights(ii, jj) = c / static_cast<double>(total);
    }
  });

  if (km.missing_fraction() > opts.max_missing_fraction) {
    throw InsufficientDataError("more than half of the (a_i, tau_j) entries have no data");
  }
  return km;
}

}  // namespace oscid
