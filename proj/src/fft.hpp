#pragma once

// Thin RAII layer over FFTW. Plan creation is serialized; execution is
// thread-safe on distinct buffers.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace oscid::detail {

/// Forward real-to-complex transform; returns n/2 + 1 bins.
std::vector<std::complex<double>> rfft(std::span<const double> x);

/// Inverse of rfft for a length-n real signal (normalized by 1/n).
std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n);

/// Unnormalized inverse complex transform of length bins.size(), scaled by 1/n.
std::vector<std::complex<double>> ifft(std::span<const std::complex<double>> bins);

}  // namespace oscid::detail
