#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesioncal/anatomy.hpp"
#include "lesioncal/embedding.hpp"
#include "lesioncal/harness.hpp"
#include "lesioncal/metrics.hpp"
#include "lesioncal/synth.hpp"

namespace lesioncal::cli {

/// Bad or missing configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> foldplan;
  std::optional<std::filesystem::path> metric_rows;
};

struct SynthSection {
  synth::PhantomSpec spec;
  std::size_t n_lesion = 0;
  std::size_t n_control = 0;
};

struct FoldsSection {
  std::size_t k = 5;
  std::size_t n_perm = 50000;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> atlas;  ///< archetype maps; empty keeps manifest phenotypes
  double threshold = 0.10;
};

struct AnatomySection {
  GlmSpec glm;
  std::string model;  ///< metric_rows model whose scores label the lesions
};

struct MorphologySection {
  EmbeddingParams embedding;
  std::size_t downsample = 2;
};

struct NoiseSection {
  std::vector<SweepArm> arms;
  std::uint64_t seed = 0;
  Pairing pairing = Pairing::increment_means;
};

struct HarnessSection {
  std::vector<SegmenterHandle> models;
  std::size_t n_boot = 10000;
  std::size_t size = 100;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t max_processes = 1;
};

struct RunConfig {
  std::filesystem::path source;
  std::string hash;  ///< FNV-1a of the effective configuration, hex
  nlohmann::json raw;
  DataSection data;
  std::optional<SynthSection> synth;
  std::optional<FoldsSection> folds;
  MetricParams metrics;
  std::optional<AnatomySection> anatomy;
  std::optional<MorphologySection> morphology;
  std::optional<NoiseSection> noise;
  std::optional<HarnessSection> harness;
  std::optional<std::filesystem::path> output;
};

/// Parses a configuration document. Relative paths resolve against
/// `base_dir`. Unknown keys and missing seeds raise ConfigError naming the key.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Applies "a.b.c=value" overrides to scalar entries. Values are read as
/// JSON when they parse, else as strings.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

/// Runs one subcommand; throws ConfigError or runtime errors.
void run_command(const std::string& command, const RunConfig& cfg, const std::filesystem::path& out_dir);

const std::vector<std::string>& command_names();

/// Entry point: parses argv and maps errors to exit codes 0 / 1 / 2.
int main(int argc, char** argv);

}  // namespace lesioncal::cli
