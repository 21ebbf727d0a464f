#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <memory>
#include <mutex>

namespace oscid::detail {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> allocate(std::size_t n) {
  return FftwBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1))));
}

class Plan {
 public:
  explicit Plan(fftw_plan p) : plan_(p) {}
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

}  // namespace

std::vector<std::complex<double>> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  const std::size_t nb = n / 2 + 1;
  auto in = allocate<double>(n);
  auto out = allocate<fftw_complex>(nb);
  fftw_plan raw;
  {
    std::lock_guard lock(planner_mutex());
    raw = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  Plan plan(raw);
  std::copy(x.begin(), x.end(), in.get());
  plan.execute();
  std::vector<std::complex<double>> bins(nb);
  for (std::size_t k = 0; k < nb; ++k) bins[k] = {out[k][0], out[k][1]};
  return bins;
}

std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n) {
  const std::size_t nb = n / 2 + 1;
  auto in = allocate<fftw_complex>(nb);
  auto out = allocate<double>(n);
  fftw_plan raw;
  {
    std::lock_guard lock(planner_mutex());
    raw = fftw_plan_dft_c2r_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  Plan plan(raw);
  for (std::size_t k = 0; k < nb; ++k) {
    const auto v = k < bins.size() ? bins[k] : std::complex<double>{};
    in[k][0] = v.real();
    in[k][1] = v.imag();
  }
  plan.execute();
  std::vector<double> y(out.get(), out.get() + n);
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : y) v *= scale;
  return y;
}

std::vector<std::complex<double>> ifft(std::span<const std::complex<double>> bins) {
  const std::size_t n = bins.size();
  auto in = allocate<fftw_complex>(n);
  auto out = allocate<fftw_complex>(n);
  fftw_plan raw;
  {
    std::lock_guard lock(planner_mutex());
    raw = fftw_plan_dft_1d(static_cast<int>(n), in.get(), out.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  Plan plan(raw);
  for (std::size_t k = 0; k < n; ++k) {
    in[k][0] = bins[k].real();
    in[k][1] = bins[k].imag();
  }
  plan.execute();
  std::vector<std::complex<double>> y(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) y[k] = {out[k][0] * scale, out[k][1] * scale};
  return y;
}

}  // namespace oscid::detail
