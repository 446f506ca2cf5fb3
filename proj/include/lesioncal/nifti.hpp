#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "lesioncal/volume.hpp"

namespace lesioncal::nifti {

/// Voxel storage types supported on disk.
enum class DataType : std::int16_t {
  uint8 = 2,
  int16 = 4,
  float32 = 16,
};

/// Header fields surfaced alongside the voxel data.
struct HeaderInfo {
  DataType datatype = DataType::float32;
  float scl_slope = 0.0F;
  float scl_inter = 0.0F;
  float vox_offset = 352.0F;
  std::int16_t ndim = 3;
  std::string descrip;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReadResult {
  GridVolume volume;
  HeaderInfo header;
};

/**
 * Reads a little-endian NIfTI-1 single file (`.nii` or `.nii.gz`).
 *
 * Stored values are scaled by scl_slope / scl_inter when the slope is
 * non-zero. 4D files must have a singleton fourth dimension.
 */
ReadResult read_volume(const std::filesystem::path& path);

/// Writes `v` as NIfTI-1. A `.gz` extension selects gzip compression.
/// Integer types require integral voxel values within range.
void write_volume(const GridVolume& v, const std::filesystem::path& path,
                  DataType datatype = DataType::float32);

/// Header and voxel payload serialisation without touching the filesystem.
std::string encode(const GridVolume& v, DataType datatype);
ReadResult decode(const std::string& bytes);

}  // namespace lesioncal::nifti
