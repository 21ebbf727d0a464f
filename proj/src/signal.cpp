#include "oscid/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fft.hpp"
#include "oscid/errors.hpp"

namespace oscid {
namespace {

constexpr std::size_t kMinEnvelopeLength = 16;
constexpr std::size_t kMinSpectrumLength = 256;
constexpr std::size_t kMinSegmentSamples = 100;
constexpr double kPeakToMedian = 3.0;

std::vector<double> demeaned(std::span<const double> x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> y(x.begin(), x.end());
  for (double& v : y) v -= mean;
  return y;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }
  return w;
}

std::vector<double> power_spectrum(std::span<const double> x, std::span<const double> window) {
  std::vector<double> xw(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) xw[k] = x[k] * window[k];
  const auto bins = detail::rfft(xw);
  std::vector<double> p(bins.size());
  for (std::size_t k = 0; k < bins.size(); ++k) p[k] = std::norm(bins[k]);
  return p;
}

std::size_t carrier_period_samples(std::span<const double> x) {
  std::size_t crossings = 0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    if ((x[k - 1] < 0.0 && x[k] >= 0.0) || (x[k - 1] >= 0.0 && x[k] < 0.0)) ++crossings;
  }
  if (crossings < 2) return 0;
  return static_cast<std::size_t>(std::llround(2.0 * static_cast<double>(x.size()) / static_cast<double>(crossings)));
}

std::size_t lag_to_samples(double lag, double dt) {
  if (!(lag >= 0.0) || !std::isfinite(lag)) throw DataError("lag must be nonnegative");
  const double k = lag / dt;
  const double kr = std::round(k);
  if (std::abs(k - kr) > 1e-6 * std::max(1.0, kr)) {
    throw DataError("lag is not an integer multiple of the sample spacing");
  }
  return static_cast<std::size_t>(kr);
}

}  // namespace

double SampleGrid::bin_width() const {
  if (amplitudes.size() < 2) throw DataError("amplitude grid needs at least two points");
  return (amplitudes.back() - amplitudes.front()) / static_cast<double>(amplitudes.size() - 1);
}

std::vector<std::size_t> SampleGrid::lag_samples(double dt) const {
  std::vector<std::size_t> lags;
  lags.reserve(taus.size());
  for (double tau : taus) lags.push_back(lag_to_samples(tau, dt));
  return lags;
}

void validate(const SampleGrid& grid) {
  if (grid.n_a() < 2) throw DataError("sample grid needs N_a >= 2");
  if (grid.n_tau() < 2) throw DataError("sample grid needs N_tau >= 2");
  if (!std::is_sorted(grid.amplitudes.begin(), grid.amplitudes.end(), std::less_equal<>{}) ||
      std::adjacent_find(grid.amplitudes.begin(), grid.amplitudes.end()) != grid.amplitudes.end()) {
    throw DataError("grid amplitudes must be strictly increasing");
  }
  if (!std::is_sorted(grid.taus.begin(), grid.taus.end(), std::less_equal<>{}) ||
      std::adjacent_find(grid.taus.begin(), grid.taus.end()) != grid.taus.end()) {
    throw DataError("grid lags must be strictly increasing");
  }
  if (!(grid.taus.front() > 0.0)) throw DataError("grid lags must be positive");
}

EnvelopeSeries analytic_envelope(const TimeSeries& ts, std::optional<double> omega) {
  validate(ts);
  const std::size_t n = ts.size();
  if (n < kMinEnvelopeLength) throw DataError("time series too short for an envelope (< 16 samples)");

  const auto x = demeaned(ts.samples);
  const auto spectrum = detail::rfft(x);

  // Analytic signal: keep DC (and Nyquist), double positive frequencies.
  std::vector<std::complex<double>> analytic(n);
  analytic[0] = spectrum[0];
  for (std::size_t k = 1; k < (n + 1) / 2; ++k) analytic[k] = 2.0 * spectrum[k];
  if (n % 2 == 0) analytic[n / 2] = spectrum[n / 2];
  const auto z = detail::ifft(analytic);

  EnvelopeSeries env;
  env.t0 = ts.t0;
  env.dt = ts.dt;
  env.amplitudes.resize(n);
  for (std::size_t k = 0; k < n; ++k) env.amplitudes[k] = std::abs(z[k]);

  std::size_t period = 0;
  if (omega) {
    if (!(*omega > 0.0)) throw DomainError("omega must be positive");
    period = static_cast<std::size_t>(std::llround(2.0 * std::numbers::pi / (*omega * ts.dt)));
  } else {
    period = carrier_period_samples(x);
  }
  env.edge_samples = std::min(period, n / 4);
  return env;
}

double dominant_frequency(const TimeSeries& ts) {
  validate(ts);
  const std::size_t n = ts.size();
  if (n < kMinSpectrumLength) throw DataError("time series too short for spectral analysis (< 256 samples)");
  const auto x = demeaned(ts.samples);

  // Welch average for detection.
  std::size_t seg = 64;
  while (seg * 2 <= n / 16) seg *= 2;
  const auto wseg = hann(seg);
  std::vector<double> welch(seg / 2 + 1, 0.0);
  std::size_t count = 0;
  for (std::size_t start = 0; start + seg <= n; start += seg / 2, ++count) {
    const auto p = power_spectrum(std::span(x).subspan(start, seg), wseg);
    for (std::size_t k = 0; k < p.size(); ++k) welch[k] += p[k];
  }
  std::vector<double> body(welch.begin() + 1, welch.end());
  const auto peak_it = std::max_element(body.begin(), body.end());
  const std::size_t k_welch = static_cast<std::size_t>(peak_it - body.begin()) + 1;
  std::nth_element(body.begin(), body.begin() + body.size() / 2, body.end());
  const double median = body[body.size() / 2];
  if (!(welch[k_welch] > kPeakToMedian * median)) {
    throw NoDominantFrequencyError("no spectral peak above 3x the median power");
  }

  // Full-resolution refinement around the detected peak.
  const auto full = power_spectrum(x, hann(n));
  const double ratio = static_cast<double>(n) / static_cast<double>(seg);
  const auto lo = static_cast<std::size_t>(std::max(1.0, std::floor((static_cast<double>(k_welch) - 1.0) * ratio)));
  const auto hi = std::min(full.size() - 2,
                           static_cast<std::size_t>(std::ceil((static_cast<double>(k_welch) + 1.0) * ratio)));
  std::size_t k = lo;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (full[j] > full[k]) k = j;
  }
  double delta = 0.0;
  if (k >= 1 && k + 1 < full.size() && full[k - 1] > 0.0 && full[k + 1] > 0.0) {
    const double l0 = std::log(full[k - 1]);
    const double l1 = std::log(full[k]);
    const double l2 = std::log(full[k + 1]);
    const double denom = l0 - 2.0 * l1 + l2;
    if (denom < 0.0) delta = std::clamp(0.5 * (l0 - l2) / denom, -0.5, 0.5);
  }
  const double f = (static_cast<double>(k) + delta) / (static_cast<double>(n) * ts.dt);
  return 2.0 * std::numbers::pi * f;
}

double autocorrelation(const EnvelopeSeries& env, double lag) {
  const std::size_t k = lag_to_samples(lag, env.dt);
  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  if (last <= first || k >= last - first) throw DataError("lag out of range for the usable record");
  const std::span<const double> a(env.amplitudes.data() + first, last - first);
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) throw DegenerateSignalError("envelope has zero variance");
  double cov = 0.0;
  for (std::size_t t = 0; t + k < a.size(); ++t) cov += (a[t] - mean) * (a[t + k] - mean);
  return cov / var;
}

std::vector<double> autocorrelation_sequence(const EnvelopeSeries& env, std::size_t max_lag) {
  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  if (last <= first || max_lag >= last - first) throw DataError("lag out of range for the usable record");
  const auto a = demeaned(std::span<const double>(env.amplitudes.data() + first, last - first));
  const std::size_t m = a.size();
  std::size_t nfft = 1;
  while (nfft < 2 * m) nfft *= 2;
  std::vector<double> padded(nfft, 0.0);
  std::copy(a.begin(), a.end(), padded.begin());
  auto bins = detail::rfft(padded);
  for (auto& b : bins) b = std::norm(b);
  const auto acov = detail::irfft(bins, nfft);
  if (!(acov[0] > 1e-300)) throw DegenerateSignalError("envelope has zero variance");
  std::vector<double> r(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) r[k] = acov[k] / acov[0];
  return r;
}

TauSelection select_tau_grid(const EnvelopeSeries& env, GrowthHint hint, std::size_t n_tau) {
  if (n_tau < 2) throw ConfigError("n_tau must be >= 2");
  const std::size_t usable = env.last_usable() > env.first_usable() ? env.last_usable() - env.first_usable() : 0;
  if (usable < 4) throw SelectionError("usable envelope too short for lag selection");
  const std::size_t half = usable / 2;

  std::vector<double> r;
  try {
    r = autocorrelation_sequence(env, half);
  } catch (const DegenerateSignalError&) {
    throw SelectionError("envelope does not decorrelate (zero variance)");
  }

  TauSelection sel;
  sel.threshold = hint == GrowthHint::kPositive ? kTauThresholdPositive : kTauThresholdNonPositive;
  std::size_t k1 = 0;
  for (std::size_t k = 1; k <= half; ++k) {
    if (r[k] < sel.threshold) {
      k1 = k;
      break;
    }
  }
  if (k1 == 0) {
    std::ostringstream os;
    os << "autocorrelation never drops below " << sel.threshold << " within half the record";
    throw SelectionError(os.str());
  }
  double k2 = kTauSpanRatio * static_cast<double>(k1);
  if (k2 > static_cast<double>(half)) {
    k2 = static_cast<double>(half);
    sel.upper_clamped = true;
  }

  std::vector<std::size_t> lags;
  for (std::size_t j = 0; j < n_tau; ++j) {
    const double k = static_cast<double>(k1) + (k2 - static_cast<double>(k1)) * static_cast<double>(j) /
                                                  static_cast<double>(n_tau - 1);
    const auto lag = static_cast<std::size_t>(std::llround(k));
    if (!lags.empty() && lags.back() == lag) {
      ++sel.duplicates_merged;
      continue;
    }
    lags.push_back(lag);
  }
  if (lags.size() < 2) throw SelectionError("fewer than two distinct lags after rounding");
  sel.taus.reserve(lags.size());
  for (auto lag : lags) sel.taus.push_back(static_cast<double>(lag) * env.dt);
  return sel;
}

std::vector<double> select_amplitude_grid(const EnvelopeSeries& env, std::size_t n_a) {
  if (n_a < 2) throw ConfigError("n_a must be >= 2");
  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  if (last <= first) throw DegenerateSignalError("no usable envelope samples");
  const auto [lo_it, hi_it] = std::minmax_element(env.amplitudes.begin() + static_cast<std::ptrdiff_t>(first),
                                                  env.amplitudes.begin() + static_cast<std::ptrdiff_t>(last));
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) throw DegenerateSignalError("envelope range is degenerate");
  const double width = (hi - lo) / static_cast<double>(n_a);
  std::vector<double> grid(n_a);
  for (std::size_t i = 0; i < n_a; ++i) grid[i] = lo + (static_cast<double>(i) + 0.5) * width;
  return grid;
}

std::vector<TimeSeries> segment_series(const TimeSeries& ts, double window) {
  validate(ts);
  if (!(window > 0.0)) throw DataError("segment window must be positive");
  const auto w = static_cast<std::size_t>(std::llround(window / ts.dt));
  if (w < kMinSegmentSamples) throw DataError("segment window shorter than 100 samples");
  if (w > ts.size()) throw DataError("segment window longer than the record");
  const std::size_t count = ts.size() / w;
  std::vector<TimeSeries> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    TimeSeries seg;
    seg.t0 = ts.time(s * w);
    seg.dt = ts.dt;
    seg.samples.assign(ts.samples.begin() + static_cast<std::ptrdiff_t>(s * w),
                       ts.samples.begin() + static_cast<std::ptrdiff_t>((s + 1) * w));
    out.push_back(std::move(seg));
  }
  return out;
}

TimeSeries band_pass(const TimeSeries& ts, double f_center, double half_width) {
  validate(ts);
  const double nyquist = 0.5 / ts.dt;
  if (!(half_width > 0.0) || !(f_center - half_width > 0.0) || !(f_center + half_width < nyquist)) {
    throw ConfigError("band-pass band must lie strictly inside (0, fs/2)");
  }
  const std::size_t n = ts.size();
  auto bins = detail::rfft(ts.samples);
  const double df = 1.0 / (static_cast<double>(n) * ts.dt);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    if (std::abs(static_cast<double>(k) * df - f_center) > half_width) bins[k] = 0.0;
  }
  TimeSeries out;
  out.t0 = ts.t0;
  out.dt = ts.dt;
  out.samples = detail::irfft(bins, n);
  return out;
}

}  // namespace oscid
