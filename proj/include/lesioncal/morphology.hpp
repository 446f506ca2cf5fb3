#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesioncal/stats.hpp"
#include "lesioncal/volume.hpp"

namespace lesioncal {

/// Flattened mask, block-downsampled by `factor` (mean over each block,
/// partial blocks at the far edges included, then >= 0.5 -> 1).
std::vector<double> lesion_vector(const BinaryMask& mask, std::size_t factor = 2);

/// Stacks lesion vectors as rows; all masks must share a grid.
Eigen::MatrixXd lesion_matrix(std::span<const BinaryMask> masks, std::size_t factor = 2);

/// Per-axis x' = (x - min) / range, fitted on ground-truth coordinates.
struct AlignmentTransform {
  std::array<double, 2> min{};
  std::array<double, 2> range{};
};

AlignmentTransform compute_alignment(const Eigen::MatrixXd& gt_coords);
Eigen::MatrixXd apply_alignment(const AlignmentTransform& t, const Eigen::MatrixXd& coords);
Eigen::MatrixXd invert_alignment(const AlignmentTransform& t, const Eigen::MatrixXd& aligned);

struct DistanceSummary {
  std::vector<std::string> ids;  ///< in ground-truth order
  std::vector<double> distances;
  double mean = 0.0;
  double median = 0.0;
};

/// Euclidean distance between each study's ground-truth and predicted
/// coordinate, matched by id.
DistanceSummary embedding_distances(std::span<const std::string> gt_ids, const Eigen::MatrixXd& gt_coords,
                                    std::span<const std::string> pred_ids, const Eigen::MatrixXd& pred_coords);

/// Paired t on (dist_a - dist_b). Identical inputs (zero-variance
/// differences) are reported as indistinguishable instead of a result.
struct ModelComparison {
  std::optional<stats::TestResult> test;
  bool indistinguishable = false;
};

ModelComparison compare_models(std::span<const double> dist_a, std::span<const double> dist_b);

}  // namespace lesioncal
