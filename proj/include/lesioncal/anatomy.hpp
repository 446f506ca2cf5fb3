#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesioncal/volume.hpp"

namespace lesioncal {

struct GlmSpec {
  std::string score_name = "dice";
  bool include_volume_covariate = false;
  double fwhm_mm = 8.0;
  std::size_t n_perm = 1000;
  double alpha_fwe = 0.05;
  std::size_t mask_m = 2;  ///< analysis voxels are lesioned in at least m subjects
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct DensityStack {
  std::vector<GridVolume> densities;
  std::vector<std::string> ids;
  double fwhm_mm = 0.0;
  BinaryMask analysis_mask;

  std::size_t subjects() const { return densities.size(); }
};

/// Voxel-wise lesion count, or frequency in [0, 1] when `normalize`.
GridVolume overlap_map(std::span<const BinaryMask> masks, bool normalize = false);

/// Smoothed masks plus the analysis mask computed from the raw masks.
DensityStack density_stack(std::span<const BinaryMask> masks, const GlmSpec& spec,
                           std::vector<std::string> ids = {});

struct Cluster {
  std::vector<std::size_t> voxels;  ///< linear indices, ascending
  double peak_t = 0.0;
  Index3 peak{};
  std::size_t size = 0;
  std::optional<double> corrected_p;  ///< corrected p at the peak, when known
};

struct TMap {
  GridVolume t;             ///< 0 outside the tested voxels
  GridVolume beta;          ///< score coefficient
  GridVolume se;            ///< its standard error
  GridVolume p_parametric;  ///< two-sided Student-t p, 1 outside tested voxels
  BinaryMask tested;        ///< analysis voxels with non-zero residual variance
  BinaryMask degenerate;    ///< analysis voxels with zero residual variance
  double df = 0.0;
};

/// OLS of density on [1, score(, volume)] at every analysis voxel; t of the
/// score coefficient. Throws on a rank-deficient design.
TMap fit_voxelwise_glm(const DensityStack& stack, std::span<const double> scores,
                       std::span<const double> covariate, const GlmSpec& spec);

struct FweResult {
  TMap tmap;
  GridVolume corrected_p;    ///< (1 + #{null max|t| >= |t|}) / (n_perm + 1); 1 outside tested voxels
  GridVolume uncorrected_p;  ///< same count against the voxel's own permutation null
  std::vector<double> null_max;
  /// Voxels with |t| above this are significant at alpha_fwe; +inf when
  /// n_perm is too small for any voxel to reach alpha.
  double t_threshold = 0.0;
  std::vector<Cluster> clusters;
};

/// Max-|t| permutation FWE. Residuals of the nuisance model (intercept, plus
/// volume when requested) are permuted (Freedman-Lane); with no covariate
/// this equals permuting the scores. Permutation j draws its shuffle from
/// (seed, j).
FweResult permutation_fwe(const DensityStack& stack, std::span<const double> scores,
                          std::span<const double> covariate, const GlmSpec& spec);

/// Connected components (26-connectivity) of voxels with |t| > threshold,
/// joining only voxels of the same sign; sorted by |peak t| descending.
std::vector<Cluster> clusters(const GridVolume& t, double threshold);

}  // namespace lesioncal
