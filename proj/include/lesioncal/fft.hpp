#pragma once

#include <complex>
#include <vector>

#include "lesioncal/volume.hpp"

namespace lesioncal::fft {

using Spectrum = std::vector<std::complex<double>>;

/// Unnormalised forward 3D DFT of a real volume, x-fastest layout.
Spectrum forward(const GridVolume& v);

/// Inverse 3D DFT scaled by 1/N; returns the real part on the grid of `like`.
GridVolume inverse_real(Spectrum spectrum, const GridVolume& like);

/// Signed frequency index of DFT bin `k` on an axis of length `n`, in the
/// centred convention: values in [-floor(n/2), ceil(n/2) - 1].
long centered_frequency(std::size_t k, std::size_t n);

}  // namespace lesioncal::fft
