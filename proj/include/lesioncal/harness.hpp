#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesioncal/corruption.hpp"
#include "lesioncal/csv.hpp"
#include "lesioncal/folds.hpp"
#include "lesioncal/metrics.hpp"
#include "lesioncal/segmenter.hpp"
#include "lesioncal/stats.hpp"

namespace lesioncal {

struct LesionStudy {
  std::string id;
  GridVolume image;
  BinaryMask label;
};

struct ControlStudy {
  std::string id;
  GridVolume image;
};

/// model name -> study id -> probability map
using PredictionTable = std::map<std::string, std::map<std::string, ProbabilityMap>>;

/// Runs every model on every image. Rows of `images` are (id, image).
PredictionTable predict_all(const std::vector<SegmenterHandle>& models,
                            const std::vector<std::pair<std::string, const GridVolume*>>& images,
                            std::size_t workers = 1);

/// One row per (lesion study of the plan, model), sorted by model then study.
/// Controls in the plan are skipped.
std::vector<MetricRow> cv_evaluate(const FoldPlan& plan, const std::map<std::string, BinaryMask>& labels,
                                   const PredictionTable& predictions, const MetricParams& params = {},
                                   const HausdorffOptions& hd = {});

csv::Row metric_rows_header();
std::vector<csv::Row> metric_rows_csv(const std::vector<MetricRow>& rows);
csv::Row pooled_header();
std::vector<csv::Row> pooled_csv(const std::vector<CvSummary>& summaries);

/// Paired comparison of two models; `test` is empty when the pair is
/// indistinguishable (zero-variance differences) or has too few pairs.
struct PairComparison {
  std::string model_a;
  std::string model_b;
  std::size_t n = 0;
  std::optional<stats::TestResult> test;
  std::string status;  ///< "tested", "indistinguishable" or "insufficient"
};

struct FpModelStats {
  std::string model;
  std::vector<double> counts;  ///< FP voxels per control, control order
  stats::Descriptive table;
  std::vector<double> boot_means;
};

struct FpReport {
  std::vector<std::string> control_ids;
  std::size_t n_boot = 0;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::vector<FpModelStats> models;
  std::vector<PairComparison> pairs;  ///< t on (boot_a - boot_b)
};

struct FpOptions {
  double theta = 0.5;
  std::size_t n_boot = 10000;
  std::size_t size = 100;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Report from FP counts, counts[m][c] for model m and control c.
FpReport fp_report_from_counts(const std::vector<std::string>& control_ids, const std::vector<std::string>& models,
                               const std::vector<std::vector<double>>& counts, const FpOptions& opts);

FpReport fp_report(const std::vector<ControlStudy>& controls, const std::vector<SegmenterHandle>& models,
                   const FpOptions& opts);

/// Table-1 columns in order, preceded by the model name.
csv::Row fp_table_header();
std::vector<csv::Row> fp_table_csv(const FpReport& r);
csv::Row fp_bootstrap_header();
std::vector<csv::Row> fp_bootstrap_csv(const FpReport& r);
csv::Row pair_header();
std::vector<csv::Row> fp_pairs_csv(const FpReport& r);
nlohmann::ordered_json to_json(const FpReport& r);

/// One noise condition: one or more schedules applied together at each
/// increment. All schedules must have the same number of steps.
struct SweepArm {
  std::string name;
  std::vector<NoiseSchedule> components;

  void validate() const;
  std::size_t n_steps() const;
};

enum class Pairing { increment_means, per_image };

struct SweepOptions {
  std::uint64_t seed = 0;
  Pairing pairing = Pairing::increment_means;
  MetricParams metric;
  HausdorffOptions hd;
  double alpha = 0.05;
  std::size_t workers = 1;
};

struct SweepCell {
  std::string noise;
  std::size_t increment = 0;
  std::vector<double> magnitudes;  ///< one per component
  std::string model;
  std::size_t n = 0;
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;
  std::size_t hd95_undefined = 0;
  double mean_pred_volume = 0.0;
};

struct SweepTest {
  std::string noise;
  std::string metric;  ///< "dice", "hd95" or "volume"
  PairComparison pair;
  std::size_t excluded = 0;  ///< (study, increment) pairs left out for undefined HD95
  std::optional<double> p_fdr;
  std::optional<double> p_fwer;
  bool reject_fdr = false;
  bool reject_fwer = false;
};

struct SweepGap {
  std::string noise;
  std::size_t increment = 0;
  std::string study;
  std::string message;
};

struct SweepReport {
  std::vector<SweepCell> cells;  ///< arm order, then increment, then model
  std::vector<SweepTest> tests;
  std::vector<SweepGap> gaps;
  Pairing pairing = Pairing::increment_means;
};

/// Seed of component `component` of the corruption for (study, increment).
std::uint64_t corruption_seed(std::uint64_t sweep_seed, const std::string& study_id, std::size_t increment,
                              std::size_t component);

/// The image a model sees at one increment: unchanged when every magnitude
/// is zero, else corrupted and re-normalised.
GridVolume corrupted_input(const GridVolume& image, const SweepArm& arm, std::size_t increment,
                           std::uint64_t sweep_seed, const std::string& study_id);

SweepReport noise_sweep(const std::vector<LesionStudy>& studies, const std::vector<SegmenterHandle>& models,
                        const std::vector<SweepArm>& arms, const SweepOptions& opts);

csv::Row sweep_cells_header();
std::vector<csv::Row> sweep_cells_csv(const SweepReport& r);
csv::Row sweep_tests_header();
std::vector<csv::Row> sweep_tests_csv(const SweepReport& r);
nlohmann::ordered_json to_json(const SweepReport& r);

}  // namespace lesioncal
