#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "lesioncal/nifti.hpp"
#include "test_support.hpp"

using namespace lesioncal;
using testing_support::TempDir;

TEST_CASE("float32 round-trip is bit-exact, plain and gzip") {
  TempDir dir("nifti");
  std::mt19937_64 gen(7);
  std::normal_distribution<float> n(0.0F, 100.0F);
  std::vector<double> data(5 * 6 * 7);
  for (auto& x : data) x = static_cast<double>(n(gen));
  const GridVolume v(Dims{5, 6, 7}, Spacing{2.0, 2.0, 3.0}, data);

  for (const char* name : {"a.nii", "a.nii.gz"}) {
    nifti::write_volume(v, dir.path() / name);
    const auto r = nifti::read_volume(dir.path() / name);
    CHECK(r.volume.dims() == v.dims());
    CHECK(r.volume.spacing() == v.spacing());
    CHECK(r.header.datatype == nifti::DataType::float32);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto a = static_cast<float>(v[i]);
      const auto b = static_cast<float>(r.volume[i]);
      REQUIRE(std::memcmp(&a, &b, sizeof(float)) == 0);
    }
  }
}

TEST_CASE("integer datatypes round-trip and reject unrepresentable values") {
  TempDir dir("nifti_int");
  const GridVolume v(Dims{2, 2, 1}, Spacing{}, std::vector<double>{0, 1, 200, 7});
  nifti::write_volume(v, dir.path() / "u8.nii", nifti::DataType::uint8);
  CHECK(nifti::read_volume(dir.path() / "u8.nii").volume == v);
  nifti::write_volume(v, dir.path() / "i16.nii.gz", nifti::DataType::int16);
  CHECK(nifti::read_volume(dir.path() / "i16.nii.gz").volume == v);

  const GridVolume frac(Dims{1, 1, 1}, Spacing{}, std::vector<double>{0.5});
  CHECK_THROWS_AS(nifti::write_volume(frac, dir.path() / "bad.nii", nifti::DataType::uint8), std::invalid_argument);
  const GridVolume big(Dims{1, 1, 1}, Spacing{}, std::vector<double>{40000});
  CHECK_THROWS_AS(nifti::write_volume(big, dir.path() / "bad.nii", nifti::DataType::int16), std::invalid_argument);
}

TEST_CASE("scl_slope and scl_inter are applied on read") {
  const GridVolume v(Dims{1, 1, 1}, Spacing{}, std::vector<double>{3});
  std::string bytes = nifti::encode(v, nifti::DataType::int16);
  const float slope = 2.0F;
  const float inter = 1.0F;
  std::memcpy(bytes.data() + 112, &slope, 4);
  std::memcpy(bytes.data() + 116, &inter, 4);
  const auto r = nifti::decode(bytes);
  CHECK(r.volume[0] == 7.0);
  CHECK(r.header.scl_slope == 2.0F);

  const float zero = 0.0F;
  std::memcpy(bytes.data() + 112, &zero, 4);
  CHECK(nifti::decode(bytes).volume[0] == 3.0);
}

TEST_CASE("malformed files are rejected") {
  const GridVolume v(Dims{2, 2, 2}, Spacing{}, 1.0);
  const std::string good = nifti::encode(v, nifti::DataType::float32);

  std::string bad_magic = good;
  std::memcpy(bad_magic.data() + 344, "ni1\0", 4);
  CHECK_THROWS_WITH_AS(nifti::decode(bad_magic), doctest::Contains("not NIfTI-1"), nifti::FormatError);

  std::string bad_type = good;
  const std::int16_t code = 64;
  std::memcpy(bad_type.data() + 70, &code, 2);
  CHECK_THROWS_WITH_AS(nifti::decode(bad_type), doctest::Contains("datatype"), nifti::FormatError);

  CHECK_THROWS_WITH_AS(nifti::decode(good.substr(0, good.size() - 1)), doctest::Contains("truncated"),
                       nifti::FormatError);

  std::string bad_rank = good;
  const std::int16_t two = 2;
  std::memcpy(bad_rank.data() + 40, &two, 2);
  CHECK_THROWS_WITH_AS(nifti::decode(bad_rank), doctest::Contains("dim[0]"), nifti::FormatError);

  std::string four_d = good;
  const std::int16_t four = 4;
  std::memcpy(four_d.data() + 40, &four, 2);
  CHECK(nifti::decode(four_d).volume == v);
}

TEST_CASE("missing file surfaces a runtime error") {
  CHECK_THROWS_AS(nifti::read_volume("/nonexistent/path.nii"), std::runtime_error);
}
