#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "oscid/afp.hpp"
#include "oscid/km_estimator.hpp"
#include "oscid/sde_sim.hpp"
#include "oscid/signal.hpp"

namespace oscid::testing {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline TimeSeries sampled(double fs, double duration, const std::function<double(double)>& f) {
  TimeSeries ts;
  ts.dt = 1.0 / fs;
  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  ts.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) ts.samples[k] = f(static_cast<double>(k) * ts.dt);
  return ts;
}

inline EnvelopeSeries envelope_of(std::vector<double> a, double dt, std::size_t edge = 0) {
  EnvelopeSeries env;
  env.dt = dt;
  env.amplitudes = std::move(a);
  env.edge_samples = edge;
  return env;
}

/// Exact discretization of an Ornstein-Uhlenbeck process with stationary
/// mean mu, standard deviation sigma and decay rate lambda.
inline std::vector<double> ou_series(std::size_t n, double dt, double mu, double sigma, double lambda,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const double rho = std::exp(-lambda * dt);
  const double s = sigma * std::sqrt(1.0 - rho * rho);
  std::vector<double> a(n);
  double x = sigma * n01(rng);
  for (auto& v : a) {
    v = mu + x;
    x = rho * x + s * n01(rng);
  }
  return a;
}

/// Euler-Maruyama on the averaged amplitude equation da = D1 dt + sqrt(2 D2) dW,
/// sampled every `dt_out`.
inline std::vector<double> amplitude_sde(const Theta& th, double omega, double t_max, double dt_out,
                                         int substeps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const double h = dt_out / substeps;
  const double d2 = th.d / (2.0 * omega * omega);
  const double amp = std::sqrt(2.0 * d2 * h);
  const auto n = static_cast<std::size_t>(std::llround(t_max / dt_out));
  std::vector<double> out(n);
  double a = th.epsilon > 0.0 && th.alpha < 0.0 ? std::sqrt(-4.0 * th.epsilon / th.alpha) : 0.5;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = a;
    for (int s = 0; s < substeps; ++s) {
      a += model_coeffs({th, omega}, a).d1 * h + amp * n01(rng);
      if (a < 0.0) a = -a;  // reflect at the origin
    }
  }
  return out;
}

/// Normalized stationary amplitude density on a uniform grid by quadrature.
inline std::vector<double> stationary_density(const Theta& th, double omega, const std::vector<double>& a) {
  std::vector<double> logp(a.size());
  double mx = -INFINITY;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k];
    logp[k] = std::log(x) + (omega * omega / th.d) * (th.epsilon * x * x / 2.0 + th.alpha * x * x * x * x / 16.0);
    mx = std::max(mx, logp[k]);
  }
  std::vector<double> p(a.size());
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += p[k] = std::exp(logp[k] - mx);
  const double h = a[1] - a[0];
  for (auto& v : p) v /= s * h;
  return p;
}

}  // namespace oscid::testing
