#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "lesioncal/corruption.hpp"
#include "test_support.hpp"

using namespace lesioncal;
using testing_support::random_volume;

namespace {

double max_abs_diff(const GridVolume& a, const GridVolume& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double energy(const GridVolume& v) {
  double e = 0.0;
  for (double x : v.data()) e += x * x;
  return e;
}

// Naive separable DFT along one axis of a complex cube (test oracle).
using Cube = std::vector<std::complex<double>>;
void dft_axis(Cube& c, const Dims& d, std::size_t axis, int sign) {
  const std::size_t n = d[axis];
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  Cube out = c;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::size_t pos = (i / stride) % n;
    const std::size_t base = i - pos * stride;
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(pos * j) / static_cast<double>(n);
      acc += c[base + j * stride] * std::polar(1.0, ang);
    }
    out[i] = acc;
  }
  c = out;
}

// Radial truncation evaluated from first principles on a cube.
GridVolume brute_gibbs(const GridVolume& v, double alpha) {
  const Dims& d = v.dims();
  Cube c(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) c[i] = v[i];
  for (std::size_t a = 0; a < 3; ++a) dft_axis(c, d, a, -1);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto p = v.coords(i);
    double r2 = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const long n = static_cast<long>(d[a]);
      long f = static_cast<long>(p[a]);
      if (f >= (n + 1) / 2) f -= n;  // signed frequency
      const double u = static_cast<double>(f) / static_cast<double>(n / 2);
      r2 += u * u;
    }
    if (std::sqrt(r2 / 3.0) > 1.0 - alpha) c[i] = 0.0;
  }
  for (std::size_t a = 0; a < 3; ++a) dft_axis(c, d, a, +1);
  GridVolume out(d, v.spacing());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real() / static_cast<double>(c.size());
  return out;
}

}  // namespace

TEST_CASE("zero magnitude is the identity for every operator") {
  std::mt19937_64 gen(2);
  const auto v = random_volume(Dims{9, 8, 7}, gen);
  CHECK(max_abs_diff(apply_rician(v, 0.0, 1), v) <= 1e-5);
  CHECK(max_abs_diff(apply_gibbs(v, 0.0), v) <= 1e-5);
  CHECK(max_abs_diff(apply_bias_field(v, 3, 0.0, 1), v) <= 1e-5);
  CHECK(max_abs_diff(apply_spike(v, 0.0, 1, 1), v) <= 1e-5);
  CHECK(max_abs_diff(apply_spike(v, 0.5, 0, 1), v) <= 1e-5);
  const std::vector<NoiseSpec> zeros{{NoiseKind::bias, 0.0, 1}, {NoiseKind::gibbs, 0.0, 2},
                                     {NoiseKind::rician, 0.0, 3}, {NoiseKind::spike, 0.0, 4}};
  CHECK(max_abs_diff(apply_combined(v, zeros), v) <= 1e-5);
}

TEST_CASE("rician noise") {
  std::mt19937_64 gen(3);
  const auto v = random_volume(Dims{6, 6, 6}, gen);
  CHECK(apply_rician(v, 0.2, 77) == apply_rician(v, 0.2, 77));
  CHECK_FALSE(apply_rician(v, 0.2, 77) == apply_rician(v, 0.2, 78));
  CHECK(apply_rician(v, 0.5, 1).min() >= 0.0);
  CHECK_THROWS_AS(apply_rician(v, -0.1, 1), std::invalid_argument);

  SUBCASE("Rayleigh mean on a zero background") {
    const GridVolume zero(Dims{100, 100, 100}, Spacing{}, 0.0);
    const double sigma = 0.1;
    const auto noisy = apply_rician(zero, sigma, 2024);
    const double mean = noisy.sum() / static_cast<double>(noisy.size());
    CHECK(std::fabs(mean - sigma * std::sqrt(std::numbers::pi / 2.0)) < 1e-3);
  }
}

TEST_CASE("gibbs truncation") {
  std::mt19937_64 gen(4);
  CHECK_THROWS_AS(apply_gibbs(GridVolume(Dims{2, 2, 2}, Spacing{}), 1.5), std::invalid_argument);

  SUBCASE("alpha = 1 keeps only DC") {
    GridVolume impulse(Dims{8, 8, 8}, Spacing{}, 0.0);
    impulse.at(3, 4, 5) = 1.0;
    const auto out = apply_gibbs(impulse, 1.0);
    for (double x : out.data()) CHECK(x == doctest::Approx(1.0 / 512.0).epsilon(1e-9));
  }

  SUBCASE("matches a brute-force DFT evaluation of the mask rule") {
    const auto v = random_volume(Dims{8, 8, 8}, gen);
    for (double alpha : {0.2, 0.5, 0.8}) {
      CHECK(max_abs_diff(apply_gibbs(v, alpha), brute_gibbs(v, alpha)) < 1e-10);
    }
  }

  SUBCASE("energy never increases") {
    for (int t = 0; t < 10; ++t) {
      const auto v = random_volume(Dims{10, 9, 8}, gen, -1.0, 2.0);
      for (double alpha : {0.1, 0.4, 0.9}) {
        CHECK(energy(apply_gibbs(v, alpha)) <= energy(v) * (1.0 + 1e-6));
      }
    }
  }
}

TEST_CASE("bias field") {
  std::mt19937_64 gen(5);
  const auto v = random_volume(Dims{7, 6, 5}, gen, -1.0, 1.0);
  const GridVolume ones(v.dims(), v.spacing(), 1.0);
  const auto field = apply_bias_field(ones, 3, 0.4, 9);
  const auto out = apply_bias_field(v, 3, 0.4, 9);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(field[i] > 0.0);
    if (v[i] != 0.0) CHECK(out[i] / v[i] == doctest::Approx(field[i] / ones[i]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(apply_bias_field(v, 3, -0.1, 1), std::invalid_argument);

  SUBCASE("degree 0 is a single constant factor e^k") {
    const auto f0 = bias_field(v, 0, 0.7, 31);
    const double k = std::log(f0[0]);
    CHECK(std::fabs(k) <= 0.7);
    const auto scaled = apply_bias_field(v, 0, 0.7, 31);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(scaled[i] == doctest::Approx(v[i] * std::exp(k)).epsilon(1e-14));
  }
}

TEST_CASE("spike noise") {
  std::mt19937_64 gen(6);
  const auto v = random_volume(Dims{8, 8, 8}, gen);
  const auto a = apply_spike(v, 0.2, 2, 5);
  CHECK(a == apply_spike(v, 0.2, 2, 5));
  CHECK(max_abs_diff(a, v) > 1e-3);
  CHECK_THROWS_AS(apply_spike(v, -1.0, 1, 1), std::invalid_argument);
}

TEST_CASE("combined corruption") {
  std::mt19937_64 gen(7);
  const auto v = random_volume(Dims{8, 8, 8}, gen, 0.2, 0.9);
  const NoiseSpec bias{NoiseKind::bias, 0.3, 11};
  const NoiseSpec gibbs{NoiseKind::gibbs, 0.4, 12};
  const NoiseSpec rician{NoiseKind::rician, 0.05, 13};

  SUBCASE("single-spec list equals the operator") {
    const std::vector<NoiseSpec> only{rician};
    CHECK(apply_combined(v, only) == apply_rician(v, 0.05, 13));
  }

  SUBCASE("order is bias, gibbs, rician regardless of list order") {
    const std::vector<NoiseSpec> shuffled{rician, gibbs, bias};
    const auto by_hand = apply_rician(apply_gibbs(apply_bias_field(v, 3, 0.3, 11), 0.4), 0.05, 13);
    CHECK(apply_combined(v, shuffled) == by_hand);

    // Regression values recorded from the composition checked above.
    const auto out = apply_combined(v, shuffled);
    CHECK(out.sum() == doctest::Approx(224.4974544133).epsilon(1e-9));
    CHECK(out[0] == doctest::Approx(0.2589299121).epsilon(1e-9));
    CHECK(out[511] == doctest::Approx(0.4861739187).epsilon(1e-9));
  }
}

TEST_CASE("schedule") {
  const auto s = schedule(NoiseKind::rician, 0.3, 4);
  const auto m = s.magnitudes();
  REQUIRE(m.size() == 4);
  CHECK(m[0] == 0.0);
  CHECK(m[1] == doctest::Approx(0.1));
  CHECK(m[2] == doctest::Approx(0.2));
  CHECK(m[3] == 0.3);
  for (std::size_t n = 10; n <= 20; ++n) {
    const auto mm = schedule(NoiseKind::gibbs, 0.8, n).magnitudes();
    CHECK(mm.front() == 0.0);
    for (std::size_t i = 1; i < mm.size(); ++i) CHECK(mm[i] > mm[i - 1]);
  }
  CHECK_THROWS_AS(schedule(NoiseKind::rician, 0.3, 1), std::invalid_argument);
  CHECK(parse_noise_kind("gibbs") == NoiseKind::gibbs);
  CHECK_FALSE(parse_noise_kind("salt").has_value());
}
