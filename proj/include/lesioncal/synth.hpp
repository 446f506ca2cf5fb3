#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lesioncal/folds.hpp"
#include "lesioncal/volume.hpp"

namespace lesioncal::synth {

struct PhantomSpec {
  Dims dims{48, 48, 48};
  Spacing spacing{2.0, 2.0, 2.0};
  double background = 0.4;
  double lesion = 0.9;
  double artefact = 0.65;
  double texture_amplitude = 0.02;
  double artefact_probability = 0.5;
  std::size_t n_archetypes = 4;
  /// Lesion radius in voxels: log-normal around `radius_median`, clipped.
  double radius_median = 3.0;
  double radius_log_sd = 0.35;
  double radius_min = 1.5;
  double radius_max = 7.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  GridVolume image;
  BinaryMask mask;
  StudyRecord record;
  bool has_artefact = false;
};

/// K Gaussian frequency maps (peak 1) centred on a ring inside the brain.
ArchetypeAtlas make_archetype_atlas(const PhantomSpec& spec);

/// Brain ellipsoid as a mask of voxels fully inside the soft edge.
BinaryMask brain_mask(const PhantomSpec& spec);

/// The inferior-frontal artefact ball. Each control draws its own radius
/// scale and a centre offset in voxels.
BinaryMask artefact_region(const PhantomSpec& spec, double radius_scale = 1.0,
                           const std::array<double, 3>& offset = {});

Phantom make_phantom(const PhantomSpec& spec, const ArchetypeAtlas& atlas, bool with_lesion,
                     std::size_t archetype_index, std::uint64_t seed, const std::string& id = "phantom");
Phantom make_phantom(const PhantomSpec& spec, bool with_lesion, std::size_t archetype_index,
                     std::uint64_t seed);

/// Study ids used by make_dataset.
std::string lesion_id(std::size_t i);
std::string control_id(std::size_t i);

/// Phantoms for the dataset held in memory, lesions first. Archetypes are
/// assigned round-robin; each study is seeded from (spec.seed, id).
std::vector<Phantom> make_phantoms(std::size_t n_pos, std::size_t n_ctrl, const PhantomSpec& spec,
                                   std::size_t workers = 1);

/// Writes images/, labels/ and manifest.json under `out_dir`. Records in
/// the result carry paths relative to `out_dir`.
std::vector<StudyRecord> make_dataset(std::size_t n_pos, std::size_t n_ctrl, const PhantomSpec& spec,
                                      const std::filesystem::path& out_dir, std::size_t workers = 1);

nlohmann::ordered_json manifest_json(const std::vector<StudyRecord>& records);
void write_manifest(const std::vector<StudyRecord>& records, const std::filesystem::path& path);
/// Relative image and label paths are resolved against the manifest's directory.
std::vector<StudyRecord> read_manifest(const std::filesystem::path& path);

}  // namespace lesioncal::synth
