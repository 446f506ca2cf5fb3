#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "lesioncal/volume.hpp"

namespace lesioncal {

/// Reference segmenter: p = clamp((normalize_intensity(image) - theta) / tau, 0, 1).
/// Inside `region`, `region_theta` replaces theta.
struct BuiltinSegmenter {
  double theta = 0.5;
  double tau = 0.2;
  std::optional<BinaryMask> region;
  double region_theta = 0.5;

  void validate() const;
};

/// Shell command with "{input}" and "{output}" placeholders, each used once.
/// Both are replaced by quoted absolute NIfTI paths.
struct ExternalSegmenter {
  std::string command;
  double timeout_s = 600.0;
  std::filesystem::path workdir;  ///< empty: the system temp directory

  void validate() const;
};

/// Precomputed probability maps, one file per study: dir / pattern with
/// "{id}" replaced by the study id.
struct PredictionSet {
  std::filesystem::path dir;
  std::string pattern = "{id}.nii.gz";

  void validate() const;
  std::filesystem::path path_for(const std::string& study_id) const;
};

struct SegmenterHandle {
  std::string name;
  std::variant<BuiltinSegmenter, ExternalSegmenter, PredictionSet> impl;

  void validate() const;
  /// False for prediction sets, which cannot score a modified image.
  bool runs_on_images() const;
};

/// Failure of one model on one study; the message names both.
class SegmenterError : public std::runtime_error {
 public:
  SegmenterError(const std::string& model, const std::string& study, const std::string& what);
  const std::string& model() const { return model_; }
  const std::string& study() const { return study_; }

 private:
  std::string model_;
  std::string study_;
};

ProbabilityMap builtin_segment(const BuiltinSegmenter& s, const GridVolume& image);

/// Runs the handle on `image`. Prediction sets ignore the image apart from
/// the grid check and load the file for `study_id`.
ProbabilityMap run_segmenter(const SegmenterHandle& handle, const GridVolume& image,
                             const std::string& study_id = "");

/// Upper bound on concurrently running external processes (default 1).
void set_external_concurrency(std::size_t limit);

/// Single-quotes `s` for /bin/sh.
std::string shell_quote(const std::string& s);

}  // namespace lesioncal
