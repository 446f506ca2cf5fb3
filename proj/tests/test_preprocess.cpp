#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lesioncal/preprocess.hpp"
#include "test_support.hpp"

using namespace lesioncal;

namespace {

GridVolume line(std::vector<double> values) {
  const std::size_t n = values.size();
  return GridVolume(Dims{n, 1, 1}, Spacing{}, std::move(values));
}

}  // namespace

TEST_CASE("geometric_mean") {
  const auto a = line({1.0, 2.0, 0.0});
  const auto b = line({4.0, 8.0, 5.0});
  const auto c = line({1.0, 4.0, 3.0});

  SUBCASE("single volume is the identity") {
    const std::vector<GridVolume> one{a};
    CHECK(geometric_mean(one) == a);
  }
  SUBCASE("values and zero policy") {
    const std::vector<GridVolume> two{a, b};
    const auto g = geometric_mean(two);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(g[2] == 0.0);
  }
  SUBCASE("three inputs: (2*8*4)^(1/3) = 4") {
    const std::vector<GridVolume> three{line({2.0}), line({8.0}), line({4.0})};
    CHECK(geometric_mean(three)[0] == doctest::Approx(4.0).epsilon(1e-14));
  }
  SUBCASE("n copies of v give v") {
    std::mt19937_64 gen(3);
    const auto v = testing_support::random_volume(Dims{4, 4, 4}, gen, 0.01, 50.0);
    const std::vector<GridVolume> copies(5, v);
    const auto g = geometric_mean(copies);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::fabs(g[i] - v[i]) <= 1e-12 * std::max(1.0, v[i]));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(geometric_mean(std::vector<GridVolume>{}), std::invalid_argument);
    CHECK_THROWS_AS(geometric_mean(std::vector<GridVolume>{a, line({1.0})}), std::invalid_argument);
    CHECK_THROWS_AS(geometric_mean(std::vector<GridVolume>{line({-1.0})}), std::invalid_argument);
  }
}

TEST_CASE("pad_to_grid") {
  CHECK(pad_offsets(Dims{91, 109, 91}, Dims{96, 128, 96}) == Index3{2, 9, 2});

  GridVolume v(Dims{2, 2, 2}, Spacing{2, 2, 2});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
  const auto p = pad_to_grid(v, Dims{4, 4, 4}, 0.0);
  CHECK(p.spacing() == v.spacing());
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const bool inside = x >= 1 && x <= 2 && y >= 1 && y <= 2 && z >= 1 && z <= 2;
        if (inside) {
          CHECK(p.at(x, y, z) == v.at(x - 1, y - 1, z - 1));
        } else {
          CHECK(p.at(x, y, z) == 0.0);
        }
      }

  CHECK(pad_to_grid(v, v.dims()) == v);
  CHECK_THROWS_AS(pad_to_grid(v, Dims{1, 4, 4}), std::invalid_argument);

  SUBCASE("non-fill multiset is preserved") {
    std::mt19937_64 gen(11);
    const auto r = testing_support::random_volume(Dims{5, 3, 4}, gen, 1.0, 2.0);
    const auto padded = pad_to_grid(r, Dims{8, 8, 9}, -1.0);
    std::vector<double> kept;
    for (double x : padded.data())
      if (x != -1.0) kept.push_back(x);
    std::vector<double> orig(r.data().begin(), r.data().end());
    std::sort(kept.begin(), kept.end());
    std::sort(orig.begin(), orig.end());
    CHECK(kept == orig);
  }
}

TEST_CASE("normalize_intensity") {
  const auto n = normalize_intensity(line({0.0, 5.0, 10.0}));
  CHECK(n[0] == doctest::Approx(0.0));
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == doctest::Approx(1.0));

  const auto bin = line({0.0, 1.0, 1.0, 0.0});
  CHECK(normalize_intensity(bin) == bin);

  const auto flat = normalize_intensity(line({3.0, 3.0, 3.0}));
  for (double x : flat.data()) CHECK(x == 0.0);

  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = testing_support::random_volume(Dims{6, 5, 4}, gen, -30.0, 80.0);
    const auto once = normalize_intensity(r);
    const auto twice = normalize_intensity(once);
    CHECK(once.min() >= 0.0);
    CHECK(once.max() <= 1.0);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-12));
  }
}

TEST_CASE("coord_channels") {
  const auto c = coord_channels(Dims{96, 128, 96});
  CHECK(c[0].min() == 0.0);
  CHECK(c[0].max() == 95.0);
  CHECK(c[1].max() == 127.0);
  CHECK(c[2].max() == 95.0);
  CHECK(c[1].at(3, 5, 7) == 5.0);
  CHECK(c[0].at(3, 5, 7) == 3.0);
  CHECK(c[2].at(3, 5, 7) == 7.0);

  const auto one = coord_channels(Dims{1, 1, 1});
  for (const auto& ch : one) CHECK(ch[0] == 0.0);
}

TEST_CASE("gaussian_smooth") {
  CHECK(fwhm_to_sigma(8.0) / 2.0 == doctest::Approx(1.69865).epsilon(1e-5));

  std::mt19937_64 gen(1);
  const auto r = testing_support::random_volume(Dims{7, 6, 5}, gen);
  CHECK(gaussian_smooth(r, 0.0) == r);
  CHECK_THROWS_AS(gaussian_smooth(r, -1.0), std::invalid_argument);

  GridVolume impulse(Dims{33, 33, 33}, Spacing{2, 2, 2}, 0.0);
  impulse.at(16, 16, 16) = 1.0;
  const auto s = gaussian_smooth(impulse, 8.0);
  CHECK(std::fabs(s.sum() - 1.0) < 1e-3);
  // Symmetric about the centre.
  CHECK(s.at(14, 16, 16) == doctest::Approx(s.at(18, 16, 16)).epsilon(1e-12));
  CHECK(s.at(16, 16, 16) > s.at(17, 16, 16));

  SUBCASE("linearity") {
    GridVolume u = testing_support::random_volume(Dims{9, 8, 7}, gen);
    GridVolume w = testing_support::random_volume(Dims{9, 8, 7}, gen);
    GridVolume mix(u.dims(), u.spacing());
    const double a = 2.5;
    const double b = -0.75;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u[i] + b * w[i];
    const auto su = gaussian_smooth(u, 3.0);
    const auto sw = gaussian_smooth(w, 3.0);
    const auto sm = gaussian_smooth(mix, 3.0);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      const double expect = a * su[i] + b * sw[i];
      CHECK(std::fabs(sm[i] - expect) <= 1e-6 * std::max(1.0, std::fabs(expect)));
    }
  }
}
