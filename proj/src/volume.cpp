#include "lesioncal/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lesioncal {

namespace {

void validate_geometry(const Dims& dims, const Spacing& spacing) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) {
    throw std::invalid_argument("GridVolume: dimensions must be positive");
  }
  if (!(spacing.sx > 0.0) || !(spacing.sy > 0.0) || !(spacing.sz > 0.0)) {
    throw std::invalid_argument("GridVolume: spacing must be strictly positive");
  }
}

}  // namespace

GridVolume::GridVolume(Dims dims, Spacing spacing, double fill)
    : dims_(dims), spacing_(spacing) {
  validate_geometry(dims, spacing);
  if (!std::isfinite(fill)) {
    throw std::invalid_argument("GridVolume: fill value must be finite");
  }
  data_.assign(dims.count(), fill);
}

GridVolume::GridVolume(Dims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  validate_geometry(dims, spacing);
  if (data_.size() != dims.count()) {
    throw std::invalid_argument("GridVolume: data length " + std::to_string(data_.size()) +
                                " does not match dimensions " + std::to_string(dims.count()));
  }
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("GridVolume: non-finite voxel value");
    }
  }
}

double GridVolume::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double GridVolume::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double GridVolume::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

void require_same_grid(const GridVolume& a, const GridVolume& b, const char* what) {
  if (!a.same_grid(b)) {
    throw std::invalid_argument(std::string(what) + ": grid mismatch");
  }
}

bool is_binary(const GridVolume& v) {
  return std::all_of(v.data().begin(), v.data().end(),
                     [](double x) { return x == 0.0 || x == 1.0; });
}

bool is_probability(const GridVolume& v) {
  return std::all_of(v.data().begin(), v.data().end(),
                     [](double x) { return x >= 0.0 && x <= 1.0; });
}

BinaryMask::BinaryMask(GridVolume volume) : volume_(std::move(volume)) {
  if (!is_binary(volume_)) {
    throw std::invalid_argument("BinaryMask: voxel values must be 0 or 1");
  }
}

BinaryMask BinaryMask::empty_like(const GridVolume& like) {
  return BinaryMask(GridVolume(like.dims(), like.spacing(), 0.0));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(
      std::count_if(volume_.data().begin(), volume_.data().end(), [](double x) { return x != 0.0; }));
}

ProbabilityMap::ProbabilityMap(GridVolume volume) : volume_(std::move(volume)) {
  if (!is_probability(volume_)) {
    throw std::invalid_argument("ProbabilityMap: voxel values must lie in [0, 1]");
  }
}

}  // namespace lesioncal
