#include "lesioncal/nifti.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace lesioncal::nifti {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

// Byte offsets into the NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T load(const std::string& buf, std::size_t offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void store(std::string& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

std::size_t bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::uint8: return 1;
    case DataType::int16: return 2;
    case DataType::float32: return 4;
  }
  return 0;
}

std::int32_t swap_bytes(std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  return static_cast<std::int32_t>((u >> 24) | ((u >> 8) & 0xFF00U) | ((u << 8) & 0xFF0000U) | (u << 24));
}

bool has_gz_extension(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::string read_all(const std::filesystem::path& path) {
  gzFile file = gzopen(path.c_str(), "rb");
  if (file == nullptr) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string out;
  std::array<char, 1 << 16> chunk{};
  int n = 0;
  while ((n = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) {
    out.append(chunk.data(), static_cast<std::size_t>(n));
  }
  int err = 0;
  const char* msg = gzerror(file, &err);
  gzclose(file);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw FormatError("read error in " + path.string() + ": " + (msg ? msg : "unknown"));
  }
  return out;
}

}  // namespace

ReadResult decode(const std::string& bytes) {
  if (bytes.size() < kHeaderSize) {
    throw FormatError("not NIfTI-1: truncated header");
  }
  const auto sizeof_hdr = load<std::int32_t>(bytes, 0);
  if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    if (swap_bytes(sizeof_hdr) == static_cast<std::int32_t>(kHeaderSize)) {
      throw FormatError("big-endian NIfTI files are not supported");
    }
    throw FormatError("not NIfTI-1: sizeof_hdr is " + std::to_string(sizeof_hdr));
  }
  if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0) {
    throw FormatError("not NIfTI-1: bad magic");
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) {
    dim[i] = load<std::int16_t>(bytes, kOffDim + 2 * i);
  }
  if (dim[0] != 3 && dim[0] != 4) {
    throw FormatError("unsupported dim[0] = " + std::to_string(dim[0]));
  }
  if (dim[1] < 1 || dim[2] < 1 || dim[3] < 1) {
    throw FormatError("non-positive spatial dimension");
  }
  if (dim[0] == 4 && dim[4] > 1) {
    throw FormatError("4D files with more than one volume are not supported");
  }

  const auto code = load<std::int16_t>(bytes, kOffDatatype);
  if (code != 2 && code != 4 && code != 16) {
    throw FormatError("unsupported datatype code " + std::to_string(code));
  }
  const auto type = static_cast<DataType>(code);

  HeaderInfo info;
  info.datatype = type;
  info.ndim = dim[0];
  info.scl_slope = load<float>(bytes, kOffSclSlope);
  info.scl_inter = load<float>(bytes, kOffSclInter);
  info.vox_offset = load<float>(bytes, kOffVoxOffset);
  info.descrip.assign(bytes.data() + kOffDescrip, strnlen(bytes.data() + kOffDescrip, 80));

  if (!(info.vox_offset >= static_cast<float>(kDataOffset))) {
    throw FormatError("vox_offset below 352");
  }

  Spacing spacing{std::fabs(load<float>(bytes, kOffPixdim + 4)),
                  std::fabs(load<float>(bytes, kOffPixdim + 8)),
                  std::fabs(load<float>(bytes, kOffPixdim + 12))};
  // Some writers leave pixdim unset; treat as unit spacing.
  if (!(spacing.sx > 0)) spacing.sx = 1.0;
  if (!(spacing.sy > 0)) spacing.sy = 1.0;
  if (!(spacing.sz > 0)) spacing.sz = 1.0;

  const Dims dims{static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]),
                  static_cast<std::size_t>(dim[3])};
  const auto offset = static_cast<std::size_t>(info.vox_offset);
  const std::size_t width = bytes_per_voxel(type);
  if (bytes.size() < offset + dims.count() * width) {
    throw FormatError("truncated voxel payload");
  }

  const bool scale = info.scl_slope != 0.0F && std::isfinite(info.scl_slope);
  const double slope = scale ? info.scl_slope : 1.0;
  const double inter = scale && std::isfinite(info.scl_inter) ? info.scl_inter : 0.0;

  std::vector<double> data(dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t at = offset + i * width;
    double raw = 0.0;
    switch (type) {
      case DataType::uint8: raw = static_cast<unsigned char>(bytes[at]); break;
      case DataType::int16: raw = load<std::int16_t>(bytes, at); break;
      case DataType::float32: raw = load<float>(bytes, at); break;
    }
    data[i] = scale ? slope * raw + inter : raw;
  }
  return {GridVolume(dims, spacing, std::move(data)), info};
}

std::string encode(const GridVolume& v, DataType datatype) {
  const Dims& d = v.dims();
  constexpr auto kMaxDim = static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max());
  if (d.nx > kMaxDim || d.ny > kMaxDim || d.nz > kMaxDim) {
    throw std::invalid_argument("volume too large for NIfTI-1");
  }
  const std::size_t width = bytes_per_voxel(datatype);
  std::string buf(kDataOffset + v.size() * width, '\0');

  store<std::int32_t>(buf, 0, static_cast<std::int32_t>(kHeaderSize));
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(d.nx), static_cast<std::int16_t>(d.ny),
                                        static_cast<std::int16_t>(d.nz), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) {
    store<std::int16_t>(buf, kOffDim + 2 * i, dim[i]);
  }
  store<std::int16_t>(buf, kOffDatatype, static_cast<std::int16_t>(datatype));
  store<std::int16_t>(buf, kOffBitpix, static_cast<std::int16_t>(8 * width));
  const Spacing& s = v.spacing();
  const std::array<float, 8> pixdim{1.0F, static_cast<float>(s.sx), static_cast<float>(s.sy),
                                    static_cast<float>(s.sz), 1.0F, 1.0F, 1.0F, 1.0F};
  for (std::size_t i = 0; i < 8; ++i) {
    store<float>(buf, kOffPixdim + 4 * i, pixdim[i]);
  }
  store<float>(buf, kOffVoxOffset, static_cast<float>(kDataOffset));
  store<float>(buf, kOffSclSlope, 1.0F);
  store<float>(buf, kOffSclInter, 0.0F);
  buf[kOffXyztUnits] = 2;  // millimetres

  // Scanner-anchored sform with the grid origin at voxel (0, 0, 0).
  store<std::int16_t>(buf, kOffSformCode, 2);
  const std::array<float, 12> srow{static_cast<float>(s.sx), 0, 0, 0, 0, static_cast<float>(s.sy), 0, 0,
                                   0, 0, static_cast<float>(s.sz), 0};
  for (std::size_t i = 0; i < srow.size(); ++i) {
    store<float>(buf, kOffSrow + 4 * i, srow[i]);
  }
  std::memcpy(buf.data() + kOffDescrip, "lesioncal", 9);
  std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);

  for (std::size_t i = 0; i < v.size(); ++i) {
    const double value = v[i];
    const std::size_t at = kDataOffset + i * width;
    switch (datatype) {
      case DataType::uint8:
        if (value != std::round(value) || value < 0 || value > 255) {
          throw std::invalid_argument("value not representable as uint8");
        }
        buf[at] = static_cast<char>(static_cast<unsigned char>(value));
        break;
      case DataType::int16:
        if (value != std::round(value) || value < std::numeric_limits<std::int16_t>::min() ||
            value > std::numeric_limits<std::int16_t>::max()) {
          throw std::invalid_argument("value not representable as int16");
        }
        store<std::int16_t>(buf, at, static_cast<std::int16_t>(value));
        break;
      case DataType::float32: {
        const auto f = static_cast<float>(value);
        if (!std::isfinite(f)) {
          throw std::invalid_argument("value overflows float32");
        }
        store<float>(buf, at, f);
        break;
      }
    }
  }
  return buf;
}

ReadResult read_volume(const std::filesystem::path& path) {
  try {
    return decode(read_all(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_volume(const GridVolume& v, const std::filesystem::path& path, DataType datatype) {
  const std::string bytes = encode(v, datatype);
  const char* mode = has_gz_extension(path) ? "wb6" : "wbT";
  gzFile file = gzopen(path.c_str(), mode);
  if (file == nullptr) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  const int written = gzwrite(file, bytes.data(), static_cast<unsigned>(bytes.size()));
  const int closed = gzclose(file);
  if (written != static_cast<int>(bytes.size()) || closed != Z_OK) {
    throw std::runtime_error("write error on " + path.string());
  }
}

}  // namespace lesioncal::nifti
