#include "oscid/sde_sim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "oscid/errors.hpp"

namespace oscid {

bool Theta::finite() const noexcept {
  return std::isfinite(epsilon) && std::isfinite(alpha) && std::isfinite(d);
}

void validate(const Theta& theta) {
  if (!theta.finite()) throw DomainError("theta has non-finite components");
  if (theta.d < 0.0) throw DomainError("noise amplitude d must be nonnegative");
}

void validate(const OscillatorModel& model) {
  validate(model.theta);
  if (!(model.omega > 0.0) || !std::isfinite(model.omega)) {
    throw DomainError("omega must be positive and finite");
  }
}

void validate(const SimConfig& cfg, double omega) {
  if (!(cfg.t_max > 0.0) || !std::isfinite(cfg.t_max)) throw ConfigError("t_max must be positive");
  if (!(cfg.fs > 0.0) || !std::isfinite(cfg.fs)) throw ConfigError("fs must be positive");
  if (cfg.substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(cfg.transient_cycles >= 0.0)) throw ConfigError("transient_cycles must be >= 0");
  if (!std::isfinite(cfg.x0) || !std::isfinite(cfg.v0)) throw ConfigError("initial state must be finite");
  if (!(cfg.dt() * omega < 0.1)) {
    std::ostringstream os;
    os << "integration step dt=" << cfg.dt() << " violates dt*omega < 0.1 for omega=" << omega;
    throw ConfigError(os.str());
  }
  if (std::llround(cfg.t_max * cfg.fs) < 1) throw ConfigError("t_max * fs yields no samples");
}

void validate(const TimeSeries& ts) {
  if (!(ts.dt > 0.0) || !std::isfinite(ts.dt)) throw DataError("time series dt must be positive");
  if (ts.samples.empty()) throw DataError("time series is empty");
  for (double v : ts.samples) {
    if (!std::isfinite(v)) throw DataError("time series contains non-finite values");
  }
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// Uniform on the open interval (0, 1) with 53 random bits.
inline double to_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> CounterRng::block(std::uint64_t counter) const noexcept {
  std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter),
                                 static_cast<std::uint32_t>(counter >> 32), 0u, 0u};
  std::uint32_t k0 = static_cast<std::uint32_t>(key_);
  std::uint32_t k1 = static_cast<std::uint32_t>(key_ >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c[0], hi0, lo0);
    mulhilo(kPhiloxM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return c;
}

std::array<double, 2> CounterRng::normal_pair(std::uint64_t counter) const noexcept {
  const auto w = block(counter);
  const double u1 = to_unit(w[0], w[1]);
  const double u2 = to_unit(w[2], w[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(phi), r * std::sin(phi)};
}

TimeSeries simulate_vdp(const OscillatorModel& model, const SimConfig& cfg) {
  validate(model);
  validate(cfg, model.omega);

  const auto& th = model.theta;
  const double dt = cfg.dt();
  const double w2 = model.omega * model.omega;
  const double noise = std::sqrt(2.0 * th.d * dt);
  const auto n_out = static_cast<std::size_t>(std::llround(cfg.t_max * cfg.fs));
  const double transient_time = cfg.transient_cycles * 2.0 * std::numbers::pi / model.omega;
  const auto n_skip = static_cast<std::size_t>(std::llround(transient_time * cfg.fs));
  const auto sub = static_cast<std::size_t>(cfg.substeps);

  CounterRng rng(cfg.seed);
  std::array<double, 2> xi{0.0, 0.0};

  TimeSeries out;
  out.t0 = 0.0;
  out.dt = 1.0 / cfg.fs;
  out.samples.reserve(n_out);

  double x = cfg.x0;
  double v = cfg.v0;
  std::uint64_t step = 0;
  for (std::size_t m = 0; m < n_skip + n_out; ++m) {
    if (m >= n_skip) out.samples.push_back(x);
    for (std::size_t s = 0; s < sub; ++s, ++step) {
      if ((step & 1u) == 0) xi = rng.normal_pair(step >> 1);
      // Semi-implicit: velocity first, position with the updated velocity.
      v += ((th.epsilon + th.alpha * x * x) * v - w2 * x) * dt + noise * xi[step & 1u];
      x += v * dt;
    }
    if (!std::isfinite(x) || !std::isfinite(v) || std::abs(x) > 1e150) {
      const double t = static_cast<double>(m + 1) / cfg.fs - transient_time;
      std::ostringstream os;
      os << "simulation blew up at t=" << t << " (eps=" << th.epsilon << ", alpha=" << th.alpha
         << ", d=" << th.d << ")";
      throw BlowUpError(t, os.str());
    }
  }
  return out;
}

double amplitude_fixed_point(const Theta& theta) {
  if (!(theta.epsilon > 0.0) || !(theta.alpha < 0.0)) {
    throw DomainError("limit cycle requires epsilon > 0 and alpha < 0");
  }
  return std::sqrt(-4.0 * theta.epsilon / theta.alpha);
}

}  // namespace oscid
