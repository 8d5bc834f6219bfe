#include "thzleaf/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>

#include "thzleaf/errors.hpp"

namespace thzleaf {

namespace {

// Planning is not thread-safe in FFTW; execution with the new-array interface is.
struct PlanCache {
  std::mutex mutex;
  std::map<std::size_t, fftw_plan> forward;
  std::map<std::size_t, fftw_plan> backward;

  ~PlanCache() {
    for (auto& [n, p] : forward) fftw_destroy_plan(p);
    for (auto& [n, p] : backward) fftw_destroy_plan(p);
  }

  fftw_plan get(std::size_t n, bool fwd) {
    std::lock_guard lock(mutex);
    auto& table = fwd ? forward : backward;
    if (auto it = table.find(n); it != table.end()) return it->second;
    double* real = fftw_alloc_real(n);
    fftw_complex* cplx = fftw_alloc_complex(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    const int ni = static_cast<int>(n);
    fftw_plan p = fwd ? fftw_plan_dft_r2c_1d(ni, real, cplx, flags) : fftw_plan_dft_c2r_1d(ni, cplx, real, flags);
    fftw_free(real);
    fftw_free(cplx);
    if (!p) throw NumericError("fftw planning failed for n=" + std::to_string(n));
    table.emplace(n, p);
    return p;
  }
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

}  // namespace

std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n) {
  if (n == 0) throw InvalidArgument("rfft: n must be positive");
  std::vector<double> in(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), in.begin());
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_execute_dft_r2c(plans().get(n, true), in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n) {
  if (spectrum.size() != n / 2 + 1) throw InvalidArgument("irfft: spectrum size must be n/2+1");
  // c2r overwrites its input.
  std::vector<std::complex<double>> in(spectrum.begin(), spectrum.end());
  std::vector<double> out(n);
  fftw_execute_dft_c2r(plans().get(n, false), reinterpret_cast<fftw_complex*>(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= scale;
  return out;
}

}  // namespace thzleaf
