#include <cmath>
#include <limits>

#include "oscid/ident.hpp"
#include "oscid/signal.hpp"

namespace oscid {

NoiseBalance noise_balance_report(const TimeSeries& ts, const Theta& theta, double omega) {
  validate(ts);
  validate(theta);
  if (!(omega > 0.0)) throw DomainError("omega must be positive");
  const std::size_t n = ts.samples.size();
  if (n < 16) throw InsufficientDataError("record too short for second differences");

  const double dt = ts.dt;
  const auto& x = ts.samples;
  NoiseBalance out;
  out.lhs.resize(n - 2);
  double acc = 0.0;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double xd = (x[k + 1] - x[k - 1]) / (2.0 * dt);
    const double xdd = (x[k + 1] - 2.0 * x[k] + x[k - 1]) / (dt * dt);
    const double v = std::abs(xdd - (theta.epsilon + theta.alpha * x[k] * x[k]) * xd + omega * omega * x[k]);
    out.lhs[k - 1] = v;
    acc += v;
  }
  out.mean_abs_lhs = acc / static_cast<double>(out.lhs.size());
  out.noise_scale = std::sqrt(2.0 * theta.d);
  if (theta.d > 0.0) {
    out.ratio = out.mean_abs_lhs / out.noise_scale;
  } else {
    out.ratio = std::numeric_limits<double>::infinity();
    out.ratio_infinite = true;
  }

  const auto env = analytic_envelope(ts, omega);
  const std::size_t first = env.first_usable();
  const std::size_t last = env.last_usable();
  if (last <= first) throw InsufficientDataError("no usable envelope samples");
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = first; k < last; ++k) s += env.amplitudes[k];
  const double count = static_cast<double>(last - first);
  out.amplitude_mean = s / count;
  for (std::size_t k = first; k < last; ++k) s2 += (env.amplitudes[k] - out.amplitude_mean) * (env.amplitudes[k] - out.amplitude_mean);
  out.amplitude_std = std::sqrt(s2 / count);
  out.amplitude_rel_dev = out.amplitude_mean > 0.0 ? out.amplitude_std / out.amplitude_mean : 0.0;
  return out;
}

}  // namespace oscid
