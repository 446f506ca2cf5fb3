#include "lesioncal/fft.hpp"

#include <fftw3.h>

#include <mutex>

namespace lesioncal::fft {

namespace {

// FFTW's planner is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void transform(Spectrum& data, const Dims& d, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(planner_mutex());
    // FFTW is row-major: the last dimension varies fastest, i.e. x here.
    plan = fftw_plan_dft_3d(static_cast<int>(d.nz), static_cast<int>(d.ny), static_cast<int>(d.nx), buf, buf,
                            sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace

Spectrum forward(const GridVolume& v) {
  Spectrum s(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = {v[i], 0.0};
  transform(s, v.dims(), FFTW_FORWARD);
  return s;
}

GridVolume inverse_real(Spectrum spectrum, const GridVolume& like) {
  transform(spectrum, like.dims(), FFTW_BACKWARD);
  GridVolume out(like.dims(), like.spacing(), 0.0);
  const double scale = 1.0 / static_cast<double>(like.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = spectrum[i].real() * scale;
  return out;
}

long centered_frequency(std::size_t k, std::size_t n) {
  const auto kk = static_cast<long>(k);
  const auto nn = static_cast<long>(n);
  return kk <= (nn - 1) / 2 ? kk : kk - nn;
}

}  // namespace lesioncal::fft
