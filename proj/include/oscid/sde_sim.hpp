#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace oscid {

/// Parameter triple identified from data: linear growth rate, nonlinear
/// coefficient and noise amplitude of the Van der Pol-type oscillator.
struct Theta {
  double epsilon = 0.0;
  double alpha = 0.0;
  double d = 0.0;

  bool finite() const noexcept;
  bool operator==(const Theta&) const = default;
};

/// Throws DomainError unless all fields are finite and d >= 0.
void validate(const Theta& theta);

struct OscillatorModel {
  Theta theta;
  double omega = 0.0;  // rad / time
};

void validate(const OscillatorModel& model);

struct SimConfig {
  double t_max = 2000.0;
  double fs = 100.0;
  int substeps = 10;
  std::uint64_t seed = 0;
  // Initial state and the number of carrier cycles integrated but not output.
  double x0 = 0.1;
  double v0 = 0.0;
  double transient_cycles = 50.0;

  double dt() const noexcept { return 1.0 / (fs * substeps); }
};

/// Throws ConfigError when the config violates its invariants for `omega`
/// (including the resolution guard dt * omega < 0.1).
void validate(const SimConfig& cfg, double omega);

struct TimeSeries {
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<double> samples;

  std::size_t size() const noexcept { return samples.size(); }
  double time(std::size_t k) const noexcept { return t0 + dt * static_cast<double>(k); }
  double duration() const noexcept { return dt * static_cast<double>(samples.size()); }
};

void validate(const TimeSeries& ts);

/// Integrates x'' - (eps + alpha x^2) x' + omega^2 x = sqrt(2d) eta with a
/// semi-implicit Euler-Maruyama step on (x, v) and decimates to cfg.fs.
/// Output is bit-identical for identical (model, cfg).
TimeSeries simulate_vdp(const OscillatorModel& model, const SimConfig& cfg);

/// Noise-free limit-cycle amplitude sqrt(-4 eps / alpha) of the averaged
/// amplitude equation da/dt = eps a / 2 + alpha a^3 / 8.
double amplitude_fixed_point(const Theta& theta);

/// Counter-based generator (Philox4x32-10) keyed on a 64-bit seed. Draw k
/// depends only on (seed, k), so independent streams need no coordination.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) noexcept : key_(seed) {}

  /// Four 32-bit words for block `counter`.
  std::array<std::uint32_t, 4> block(std::uint64_t counter) const noexcept;

  /// Two exact standard normals (Box-Muller) from block `counter`.
  std::array<double, 2> normal_pair(std::uint64_t counter) const noexcept;

 private:
  std::uint64_t key_;
};

}  // namespace oscid
