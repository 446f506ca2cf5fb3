#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace lesioncal {

/// Voxel counts along x, y, z.
struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  bool operator==(const Dims&) const = default;
};

/// Voxel size in millimetres.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  double operator[](std::size_t axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  bool operator==(const Spacing&) const = default;
};

/// Integer voxel coordinate.
using Index3 = std::array<std::size_t, 3>;

/**
 * Dense scalar field on a regular 3D grid.
 *
 * Values are stored x-fastest: linear index = x + nx * (y + ny * z).
 * Constructors reject empty grids, non-positive spacing and non-finite
 * values. Mutable element access does not re-validate.
 */
class GridVolume {
 public:
  GridVolume() = default;
  GridVolume(Dims dims, Spacing spacing, double fill = 0.0);
  GridVolume(Dims dims, Spacing spacing, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  Index3 coords(std::size_t linear) const {
    return {linear % dims_.nx, (linear / dims_.nx) % dims_.ny, linear / (dims_.nx * dims_.ny)};
  }

  bool same_grid(const GridVolume& other) const {
    return dims_ == other.dims_ && spacing_ == other.spacing_;
  }

  double sum() const;
  double min() const;
  double max() const;

  bool operator==(const GridVolume&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<double> data_;
};

/// Throws std::invalid_argument naming `what` when grids differ.
void require_same_grid(const GridVolume& a, const GridVolume& b, const char* what);

/// A volume whose voxels are exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(GridVolume volume);
  /// All-zero mask on the grid of `like`.
  static BinaryMask empty_like(const GridVolume& like);

  const GridVolume& volume() const { return volume_; }
  const Dims& dims() const { return volume_.dims(); }
  std::size_t size() const { return volume_.size(); }
  bool contains(std::size_t i) const { return volume_[i] != 0.0; }
  std::size_t count() const;

 private:
  GridVolume volume_;
};

/// A volume whose voxels lie in [0, 1].
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  explicit ProbabilityMap(GridVolume volume);

  const GridVolume& volume() const { return volume_; }
  const Dims& dims() const { return volume_.dims(); }
  std::size_t size() const { return volume_.size(); }
  double operator[](std::size_t i) const { return volume_[i]; }

 private:
  GridVolume volume_;
};

bool is_binary(const GridVolume& v);
bool is_probability(const GridVolume& v);

}  // namespace lesioncal
