#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "oscid/sde_sim.hpp"

namespace oscid {

/// Instantaneous amplitude a(t). The first and last `edge_samples` samples
/// lie within one carrier period of the record ends, where the Hilbert
/// transform is unreliable; they are flagged, not trimmed.
struct EnvelopeSeries {
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<double> amplitudes;
  std::size_t edge_samples = 0;

  std::size_t size() const noexcept { return amplitudes.size(); }
  bool flagged(std::size_t k) const noexcept {
    return k < edge_samples || k + edge_samples >= amplitudes.size();
  }
  /// Index range [first, last) of unflagged samples.
  std::size_t first_usable() const noexcept { return edge_samples; }
  std::size_t last_usable() const noexcept {
    return amplitudes.size() > edge_samples ? amplitudes.size() - edge_samples : 0;
  }
};

/// The (a_i, tau_j) lattice. Amplitudes and lags are strictly increasing and
/// every lag is an integer multiple of the envelope sample spacing.
struct SampleGrid {
  std::vector<double> amplitudes;
  std::vector<double> taus;

  std::size_t n_a() const noexcept { return amplitudes.size(); }
  std::size_t n_tau() const noexcept { return taus.size(); }
  /// Width of the conditioning bins (the amplitude spacing).
  double bin_width() const;
  /// taus expressed as sample lags; throws DataError if a lag is not an
  /// integer multiple of dt.
  std::vector<std::size_t> lag_samples(double dt) const;
};

void validate(const SampleGrid& grid);

/// |x + i H[x]| of the mean-removed signal, via the FFT analytic-signal
/// construction. When `omega` is not supplied the carrier period used for
/// edge flagging is estimated from the zero-crossing rate.
EnvelopeSeries analytic_envelope(const TimeSeries& ts, std::optional<double> omega = std::nullopt);

/// 2*pi*f of the spectral peak. Detection uses a Welch-averaged Hann
/// periodogram (peak must exceed 3x the median); the location is refined on
/// the full-length Hann periodogram by three-point quadratic interpolation.
double dominant_frequency(const TimeSeries& ts);

/// Biased sample autocorrelation of the mean-removed usable envelope at
/// `lag` (time units, integer multiple of dt).
double autocorrelation(const EnvelopeSeries& env, double lag);

/// Autocorrelation for lags 0..max_lag samples, computed by FFT.
std::vector<double> autocorrelation_sequence(const EnvelopeSeries& env, std::size_t max_lag);

enum class GrowthHint { kPositive, kNonPositive };

struct TauSelection {
  std::vector<double> taus;
  std::size_t duplicates_merged = 0;
  bool upper_clamped = false;  // tau_2 limited by half the usable record
  double threshold = 0.0;
};

inline constexpr double kTauThresholdPositive = 0.97;
inline constexpr double kTauThresholdNonPositive = 0.6;
inline constexpr double kTauSpanRatio = 100.0;
inline constexpr std::size_t kDefaultNTau = 100;
inline constexpr std::size_t kDefaultNA = 50;

/// tau_1 is the first lag where the envelope autocorrelation falls below
/// 0.97 (positive hint) or 0.6; tau_2 = 100 tau_1; n_tau equispaced lags in
/// between, rounded to sample multiples.
TauSelection select_tau_grid(const EnvelopeSeries& env, GrowthHint hint,
                             std::size_t n_tau = kDefaultNTau);

/// n_a equispaced amplitudes inset half a bin from the observed range.
std::vector<double> select_amplitude_grid(const EnvelopeSeries& env, std::size_t n_a = kDefaultNA);

/// Contiguous non-overlapping windows; the trailing partial window is dropped.
std::vector<TimeSeries> segment_series(const TimeSeries& ts, double window);

/// Zero-phase spectral-mask band-pass keeping |f - f_center| <= half_width.
TimeSeries band_pass(const TimeSeries& ts, double f_center, double half_width);

}  // namespace oscid
