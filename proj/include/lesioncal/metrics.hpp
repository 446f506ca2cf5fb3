#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesioncal/volume.hpp"

namespace lesioncal {

struct MetricParams {
  double focal_gamma = 2.0;        ///< focusing exponent
  double dice_smooth = 1e-5;       ///< soft-Dice smoothing constant
  double threshold = 0.5;          ///< binarisation threshold
  double ta_threshold = 0.5;       ///< Thresholded Average cut-off
  double ta_weight = 1.0;          ///< Thresholded Average weight on controls
  std::size_t patience = 150;      ///< early-stopping patience (epochs)

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// One (study, model, condition) evaluation.
struct MetricRow {
  std::string study_id;
  std::string model_id;
  int fold = -1;
  std::string condition;
  double dice = 0.0;
  std::optional<double> hd95;
  std::size_t pred_volume = 0;
  std::size_t label_volume = 0;
  std::size_t fp_voxels = 0;
};

double dice_score(const BinaryMask& a, const BinaryMask& b);

double soft_dice_loss(const ProbabilityMap& p, const BinaryMask& g, const MetricParams& params = {});

/// Probabilities are clamped to [1e-7, 1 - 1e-7] before logarithms.
double focal_loss(const ProbabilityMap& p, const BinaryMask& g, const MetricParams& params = {});

/// Plain binary cross-entropy with the same clamp as focal_loss.
double binary_cross_entropy(const ProbabilityMap& p, const BinaryMask& g);

struct HausdorffOptions {
  double percentile = 95.0;
  /// Measure in millimetres using the grid spacing instead of voxel units.
  bool use_spacing = false;
};

/// Boundary voxels: mask voxels with at least one 6-neighbour outside the
/// mask. Voxels on the volume edge count as boundary.
std::vector<std::size_t> surface_voxels(const BinaryMask& m);

/// Symmetric percentile Hausdorff distance between mask surfaces; nullopt
/// when either mask is empty.
std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b, const HausdorffOptions& opts = {});

/// Percentile with linear interpolation between order statistics.
double percentile_linear(std::vector<double> values, double q);

/// Mean of voxel values strictly above the cut-off; 0 when there are none.
double thresholded_average_loss(const ProbabilityMap& p, const MetricParams& params = {});

/// Lesion studies: soft Dice + focal. Controls: focal against an empty
/// target plus the weighted Thresholded Average penalty.
double combined_loss(const ProbabilityMap& p, const BinaryMask& g, bool is_control,
                     const MetricParams& params = {});

/// Voxel is 1 iff p > theta.
BinaryMask binarize(const ProbabilityMap& p, double theta = 0.5);

std::size_t fp_voxel_count(const ProbabilityMap& p, double theta = 0.5);

struct EpochMetrics {
  double dice = 0.0;
  double hd = 0.0;
};

struct EarlyStopDecision {
  std::size_t stop_epoch = 0;   ///< first epoch past patience, or last epoch
  std::size_t best_epoch = 0;   ///< checkpoint to keep
  std::size_t last_joint = 0;   ///< last epoch where Dice and HD both improved
  bool stopped = false;
};

/**
 * Joint Dice/HD early stopping over a metric trace.
 *
 * An epoch is a joint improvement when its Dice beats every earlier Dice
 * and its HD beats every earlier HD (epoch 0 always qualifies). Training
 * stops at the first epoch more than `patience` epochs after the last
 * joint improvement. The kept checkpoint is the best Dice in
 * [last_joint, last_joint + patience], earliest on ties.
 */
EarlyStopDecision early_stop(std::span<const EpochMetrics> trace, const MetricParams& params = {});

}  // namespace lesioncal
