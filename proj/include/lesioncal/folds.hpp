#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesioncal/metrics.hpp"
#include "lesioncal/volume.hpp"

namespace lesioncal {

enum class Sex { female, male, unknown };
std::string to_string(Sex s);
Sex parse_sex(std::string_view s);

struct StudyRecord {
  std::string id;
  std::string image_path;
  std::optional<std::string> label_path;  ///< absent for controls
  double lesion_volume = 0.0;             ///< voxels
  double age = 0.0;
  Sex sex = Sex::unknown;
  std::optional<std::size_t> phenotype;  ///< archetype index, nullopt = "none"
  bool is_control = false;

  void validate() const;
};

struct ArchetypeAtlas {
  std::vector<GridVolume> maps;
  double threshold = 0.10;

  void validate() const;
  /// Archetype k as a binary mask: voxels with map value >= threshold.
  BinaryMask mask(std::size_t k) const;
};

/// Archetype with the largest Dice against `mask`; nullopt when every Dice
/// is zero. Ties go to the lowest index.
std::optional<std::size_t> assign_phenotype(const BinaryMask& mask, const ArchetypeAtlas& atlas);

/// Scores of one candidate partition.
struct FoldCandidate {
  std::vector<int> fold_of;  ///< fold per record, in record order
  double kw_h = 0.0;
  double kw_p = 1.0;
  double mean_var = 0.0;  ///< variance across folds of mean volume
  double sd_var = 0.0;    ///< variance across folds of volume SD
};

struct FoldDiagnostics {
  double kw_h = 0.0;
  double kw_p = 1.0;
  double mean_var = 0.0;
  double sd_var = 0.0;
  double pool_median_p = 0.0;
  double pool_median_mean_var = 0.0;
  double pool_median_sd_var = 0.0;
  std::size_t top_pool_size = 0;
  std::size_t selected_index = 0;
  std::string selection_rule;
  std::vector<std::size_t> fold_sizes;
  std::vector<double> fold_mean_volume;
  std::vector<double> fold_sd_volume;
  /// phenotype label ("none" or index) -> count per fold
  std::map<std::string, std::vector<std::size_t>> phenotype_counts;
};

struct FoldAssignment {
  std::string id;
  int fold = 0;
  bool is_control = false;
};

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::size_t n_perm = 0;
  std::vector<FoldAssignment> assignments;
  FoldDiagnostics diagnostics;

  std::optional<int> fold_of(const std::string& id) const;
};

/// Candidate `index` of the search: each phenotype class is shuffled, the
/// classes are dealt round-robin across folds and the fold labels are then
/// permuted. Depends only on (records, k, seed, index).
FoldCandidate generate_candidate(std::span<const StudyRecord> records, std::size_t k, std::uint64_t seed,
                                 std::size_t index);

/// Balanced k-fold plan for lesion studies. Keeps the candidates whose KW
/// p is in the top 1% of the pool, then minimises mean_var / median +
/// sd_var / median over the pool; ties go to the lowest candidate index.
FoldPlan balance_folds(std::span<const StudyRecord> records, std::size_t k = 5, std::size_t n_perm = 50000,
                       std::uint64_t seed = 0, std::size_t workers = 1);

/// Appends controls to `plan`, split into k parts by count only.
void assign_controls(FoldPlan& plan, std::span<const StudyRecord> controls, std::uint64_t seed);

struct FoldSummaryRow {
  int fold = 0;
  std::size_t n = 0;
  double mean_age = 0.0;
  std::optional<double> sd_age;
  double prop_female = 0.0;
  std::optional<double> sd_female;
  double mean_label = 0.0;
  std::optional<double> sd_label;
};

/// Column names of the fold summary table, in output order.
std::vector<std::string> fold_summary_header();

/// Per-fold demographics over the lesion studies of the plan.
std::vector<FoldSummaryRow> fold_summary(const FoldPlan& plan, std::span<const StudyRecord> records);

struct FoldMeans {
  int fold = 0;
  std::size_t n = 0;
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;
};

struct CvSummary {
  std::string model_id;
  std::size_t n = 0;
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;
  std::size_t hd95_excluded = 0;
  std::vector<FoldMeans> folds;
};

/// Pooled and per-fold means per model, sorted by model id. Undefined HD95
/// rows are left out of HD means and counted.
std::vector<CvSummary> aggregate_cv(std::span<const MetricRow> rows);

nlohmann::ordered_json to_json(const FoldPlan& plan);
FoldPlan plan_from_json(const nlohmann::json& j);

}  // namespace lesioncal
