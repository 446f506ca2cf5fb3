#pragma once

#include <array>
#include <span>

#include "lesioncal/volume.hpp"

namespace lesioncal {

/// Voxel-wise geometric mean, evaluated in the log domain. A zero in any
/// input yields 0 at that voxel.
GridVolume geometric_mean(std::span<const GridVolume> volumes);

/// Centres `v` inside a larger grid; the lower-side offset on each axis is
/// floor((target - source) / 2).
GridVolume pad_to_grid(const GridVolume& v, Dims target, double fill = 0.0);

/// Lower-side offsets used by pad_to_grid.
Index3 pad_offsets(Dims source, Dims target);

/// Mean removal followed by min-max rescaling to [0, 1]. A constant
/// volume maps to all zeros.
GridVolume normalize_intensity(const GridVolume& v);

/// Coordinate channels: X holds i, Y holds j, Z holds k at voxel (i, j, k).
std::array<GridVolume, 3> coord_channels(Dims dims, Spacing spacing = {});

/// FWHM (mm) to Gaussian sigma (mm).
double fwhm_to_sigma(double fwhm_mm);

/// Separable Gaussian smoothing with zero-padded boundaries. Each 1D kernel
/// is sampled out to ceil(4 sigma) voxels and normalised to unit sum.
GridVolume gaussian_smooth(const GridVolume& v, double fwhm_mm);

}  // namespace lesioncal
