#include "lesioncal/preprocess.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace lesioncal {

GridVolume geometric_mean(std::span<const GridVolume> volumes) {
  if (volumes.empty()) {
    throw std::invalid_argument("geometric_mean: empty volume list");
  }
  const GridVolume& first = volumes.front();
  for (const auto& v : volumes) {
    require_same_grid(first, v, "geometric_mean");
    for (double x : v.data()) {
      if (x < 0.0) {
        throw std::invalid_argument("geometric_mean: negative voxel value");
      }
    }
  }
  if (volumes.size() == 1) {
    return first;
  }

  const double n = static_cast<double>(volumes.size());
  GridVolume out(first.dims(), first.spacing(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double log_sum = 0.0;
    bool zero = false;
    for (const auto& v : volumes) {
      if (v[i] == 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(v[i]);
    }
    out[i] = zero ? 0.0 : std::exp(log_sum / n);
  }
  return out;
}

Index3 pad_offsets(Dims source, Dims target) {
  Index3 offsets{};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (target[axis] < source[axis]) {
      throw std::invalid_argument("pad_to_grid: target dimension " + std::to_string(axis) +
                                  " is smaller than the source");
    }
    offsets[axis] = (target[axis] - source[axis]) / 2;
  }
  return offsets;
}

GridVolume pad_to_grid(const GridVolume& v, Dims target, double fill) {
  const Index3 off = pad_offsets(v.dims(), target);
  GridVolume out(target, v.spacing(), fill);
  const Dims& d = v.dims();
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        out.at(x + off[0], y + off[1], z + off[2]) = v.at(x, y, z);
      }
    }
  }
  return out;
}

GridVolume normalize_intensity(const GridVolume& v) {
  GridVolume out = v;
  const double mean = v.sum() / static_cast<double>(v.size());
  for (double& x : out.data()) {
    x -= mean;
  }
  const double lo = out.min();
  const double range = out.max() - lo;
  if (!(range > 0.0)) {
    for (double& x : out.data()) x = 0.0;
    return out;
  }
  for (double& x : out.data()) {
    x = (x - lo) / range;
  }
  return out;
}

std::array<GridVolume, 3> coord_channels(Dims dims, Spacing spacing) {
  std::array<GridVolume, 3> out{GridVolume(dims, spacing), GridVolume(dims, spacing),
                                GridVolume(dims, spacing)};
  for (std::size_t z = 0; z < dims.nz; ++z) {
    for (std::size_t y = 0; y < dims.ny; ++y) {
      for (std::size_t x = 0; x < dims.nx; ++x) {
        out[0].at(x, y, z) = static_cast<double>(x);
        out[1].at(x, y, z) = static_cast<double>(y);
        out[2].at(x, y, z) = static_cast<double>(z);
      }
    }
  }
  return out;
}

double fwhm_to_sigma(double fwhm_mm) { return fwhm_mm / (2.0 * std::sqrt(2.0 * std::numbers::ln2)); }

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_vox));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma_vox * sigma_vox));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : k) w /= total;
  return k;
}

// Convolves along one axis in place; samples outside the grid are zero.
void convolve_axis(GridVolume& v, std::size_t axis, const std::vector<double>& kernel) {
  const Dims& d = v.dims();
  const std::size_t len = d[axis];
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> line(len);
  std::vector<double> result(len);

  const std::size_t outer_a = axis == 0 ? d.ny : d.nx;
  const std::size_t outer_b = axis == 2 ? d.ny : d.nz;
  for (std::size_t b = 0; b < outer_b; ++b) {
    for (std::size_t a = 0; a < outer_a; ++a) {
      std::size_t base = 0;
      switch (axis) {
        case 0: base = v.index(0, a, b); break;
        case 1: base = v.index(a, 0, b); break;
        default: base = v.index(a, b, 0); break;
      }
      for (std::size_t i = 0; i < len; ++i) line[i] = v[base + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const auto j = static_cast<std::ptrdiff_t>(i) + t;
          if (j < 0 || j >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += kernel[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(j)];
        }
        result[i] = acc;
      }
      for (std::size_t i = 0; i < len; ++i) v[base + i * stride] = result[i];
    }
  }
}

}  // namespace

GridVolume gaussian_smooth(const GridVolume& v, double fwhm_mm) {
  if (fwhm_mm < 0.0 || !std::isfinite(fwhm_mm)) {
    throw std::invalid_argument("gaussian_smooth: fwhm must be a non-negative number");
  }
  if (fwhm_mm == 0.0) {
    return v;
  }
  GridVolume out = v;
  const double sigma_mm = fwhm_to_sigma(fwhm_mm);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (v.dims()[axis] == 1) continue;
    convolve_axis(out, axis, gaussian_kernel(sigma_mm / v.spacing()[axis]));
  }
  return out;
}

}  // namespace lesioncal
