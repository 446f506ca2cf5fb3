#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lesioncal/morphology.hpp"
#include "test_support.hpp"

using namespace lesioncal;
using Eigen::MatrixXd;

TEST_CASE("lesion vectors") {
  GridVolume v(Dims{4, 2, 2}, Spacing{}, 0.0);
  v.at(0, 0, 0) = 1.0;
  v.at(1, 0, 0) = 1.0;
  v.at(0, 1, 0) = 1.0;
  v.at(0, 0, 1) = 1.0;  // block (0..1)^3 holds 4 of 8 -> 1
  v.at(2, 0, 0) = 1.0;  // block at x 2..3 holds 1 of 8 -> 0
  const BinaryMask m(v);
  CHECK(lesion_vector(m, 2) == std::vector<double>{1.0, 0.0});
  CHECK(lesion_vector(m, 1) == std::vector<double>(v.data().begin(), v.data().end()));

  // Odd size: last block is partial and averaged over the voxels present.
  GridVolume odd(Dims{3, 1, 1}, Spacing{}, std::vector<double>{0, 0, 1});
  CHECK(lesion_vector(BinaryMask(odd), 2) == std::vector<double>{0.0, 1.0});

  std::mt19937_64 gen(1);
  const std::vector<BinaryMask> masks{testing_support::random_mask(Dims{6, 6, 6}, gen),
                                      testing_support::random_mask(Dims{6, 6, 6}, gen)};
  const auto mat = lesion_matrix(masks, 2);
  CHECK(mat.rows() == 2);
  CHECK(mat.cols() == 27);
  CHECK_THROWS_AS(lesion_vector(m, 0), std::invalid_argument);
}

TEST_CASE("alignment") {
  MatrixXd gt(3, 2);
  gt << -2, 5, 2, 7, 0, 6;
  const auto t = compute_alignment(gt);
  const auto a = apply_alignment(t, gt);
  CHECK(a(0, 0) == 0.0);
  CHECK(a(1, 0) == 1.0);
  CHECK(a(2, 0) == 0.5);
  CHECK(a.col(1).minCoeff() == 0.0);
  CHECK(a.col(1).maxCoeff() == 1.0);
  MatrixXd pred(1, 2);
  pred << 3, 6;
  CHECK(apply_alignment(t, pred)(0, 0) == doctest::Approx(1.25));

  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd(0.0, 50.0);
  MatrixXd r(30, 2);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = nd(gen);
  const auto tr = compute_alignment(r);
  CHECK((invert_alignment(tr, apply_alignment(tr, r)) - r).cwiseAbs().maxCoeff() <= 1e-12);

  MatrixXd flat(2, 2);
  flat << 1, 0, 1, 1;
  CHECK_THROWS_AS(compute_alignment(flat), std::invalid_argument);
}

TEST_CASE("embedding distances") {
  const std::vector<std::string> ids{"a", "b"};
  MatrixXd gt(2, 2), pred(2, 2);
  gt << 0, 0, 1, 1;
  pred << 1, 1, 0.3, 0.4;
  const std::vector<std::string> pred_ids{"b", "a"};
  const auto s = embedding_distances(ids, gt, pred_ids, pred);
  CHECK(s.distances[0] == doctest::Approx(0.5));
  CHECK(s.distances[1] == 0.0);
  CHECK(embedding_distances(ids, gt, ids, gt).mean == 0.0);
  CHECK_THROWS_AS(embedding_distances(ids, gt, std::vector<std::string>{"a", "c"}, pred), std::invalid_argument);

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + gen() % 20;
    std::vector<std::string> rid;
    MatrixXd g(static_cast<Eigen::Index>(n), 2), p(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) rid.push_back("s" + std::to_string(i));
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] = u(gen);
      p.data()[i] = u(gen);
    }
    const auto d = embedding_distances(rid, g, rid, p);
    std::vector<double> brute;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = g(static_cast<Eigen::Index>(i), 0) - p(static_cast<Eigen::Index>(i), 0);
      const double dy = g(static_cast<Eigen::Index>(i), 1) - p(static_cast<Eigen::Index>(i), 1);
      brute.push_back(std::sqrt(dx * dx + dy * dy));
    }
    double mean = 0.0;
    for (double x : brute) mean += x;
    mean /= static_cast<double>(n);
    std::sort(brute.begin(), brute.end());
    const double median = n % 2 ? brute[n / 2] : 0.5 * (brute[n / 2 - 1] + brute[n / 2]);
    CHECK(d.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(d.median == doctest::Approx(median).epsilon(1e-12));
  }
}

TEST_CASE("model comparison") {
  const std::vector<double> b{0.1, 0.3, 0.2, 0.5, 0.4, 0.25, 0.35, 0.15, 0.45, 0.05};
  std::vector<double> a;
  std::mt19937_64 gen(4);
  std::normal_distribution<double> jitter(0.0, 0.01);
  for (double x : b) a.push_back(x + 0.1 + jitter(gen));
  const auto c = compare_models(a, b);
  REQUIRE(c.test.has_value());
  CHECK(c.test->statistic > 0.0);
  CHECK(c.test->p_value < 0.001);
  CHECK(compare_models(b, a).test->statistic == doctest::Approx(-c.test->statistic));
  const auto same = compare_models(b, b);
  CHECK(same.indistinguishable);
  CHECK_FALSE(same.test.has_value());
}
