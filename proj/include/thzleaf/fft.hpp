#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace thzleaf {

/// Real-input DFT of length n (input zero-padded or truncated to n):
/// X[k] = sum_j x[j] exp(-2 pi i j k / n), k = 0..n/2.
std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n);

/// Inverse of rfft including the 1/n factor; returns n real samples.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n);

/// Frequency of bin k for an n-point transform with sample spacing dt.
inline double bin_frequency(std::size_t k, std::size_t n, double dt) {
  return static_cast<double>(k) / (static_cast<double>(n) * dt);
}

}  // namespace thzleaf
