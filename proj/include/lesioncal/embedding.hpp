#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace lesioncal {

struct EmbeddingParams {
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  double spread = 1.0;
  std::size_t n_epochs = 200;
  std::size_t negative_sample_rate = 5;
  double learning_rate = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Constants of the low-dimensional similarity 1 / (1 + a x^(2b)).
struct CurveParams {
  double a = 0.0;
  double b = 0.0;
};

/// Least-squares fit of (a, b) to 1 for x <= min_dist and
/// exp(-(x - min_dist) / spread) beyond, on 300 points in [0, 3 spread].
CurveParams fit_curve(double min_dist, double spread = 1.0);

/// Neighbours of each row, excluding the row itself, nearest first; ties
/// broken by index.
struct KnnGraph {
  std::vector<std::vector<std::size_t>> indices;
  std::vector<std::vector<double>> distances;
};

KnnGraph exact_knn(const Eigen::MatrixXd& data, std::size_t k);

/// Per-point rho (nearest non-zero distance) and sigma chosen by bisection
/// so that sum_j exp(-max(0, d_ij - rho) / sigma) = log2(k).
struct SmoothKnn {
  std::vector<double> rho;
  std::vector<double> sigma;
};

SmoothKnn smooth_knn(const KnnGraph& knn, std::size_t k);

struct GraphEdge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;
};

/// Fuzzy union w = w1 + w2 - w1 w2 of the directed memberships, one entry
/// per unordered pair (i < j), sorted.
std::vector<GraphEdge> fuzzy_graph(const KnnGraph& knn, const SmoothKnn& smooth);

struct EmbeddingModel {
  EmbeddingParams params;
  CurveParams curve;
  Eigen::MatrixXd data;    ///< training rows
  Eigen::MatrixXd coords;  ///< n x 2
  bool degenerate = false;  ///< all rows identical; every point at the origin
  bool spectral_init = false;

  double diameter() const;
};

/// 2D embedding. Exact duplicate rows are embedded once and share a
/// coordinate. Single-threaded SGD, so output is a function of (data, params).
EmbeddingModel fit_embedding(const Eigen::MatrixXd& data, const EmbeddingParams& params);

/// Places new rows. A row equal to a training row takes that row's
/// coordinate. Others start at the membership-weighted mean of their nearest
/// training coordinates and get n_epochs / 3 SGD epochs with training
/// points fixed.
Eigen::MatrixXd embed_new(const EmbeddingModel& model, const Eigen::MatrixXd& data);

nlohmann::ordered_json to_json(const EmbeddingModel& model);
EmbeddingModel embedding_from_json(const nlohmann::json& j);

}  // namespace lesioncal
