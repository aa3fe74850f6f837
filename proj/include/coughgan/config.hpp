#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "coughgan/acgan.hpp"
#include "coughgan/audio_io.hpp"
#include "coughgan/classifier.hpp"
#include "coughgan/dsp.hpp"

namespace coughgan {

inline constexpr int kConfigVersion = 1;

struct PathsConfig {
  std::filesystem::path manifest;
  /// Where the clips live; empty means beside the manifest.
  std::filesystem::path audio_dir;
  std::filesystem::path work_dir;
};

struct DataConfig {
  double min_cough_detected = 0.7;
  bool require_ssl = true;
  bool balance = false;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  LabelSource labels = LabelSource::status_ssl;
};

struct DspConfig {
  dsp::PreprocessParams preprocess;
  dsp::SegmentationParams segmentation;
};

struct FeaturesConfig {
  double top_db = 80.0;
  int griffin_lim_iterations = 60;
};

struct AugmentationConfig {
  /// Synthetic samples per class. No default: synth needs this or --count.
  std::optional<std::size_t> count_per_class;
  /// Synthesized samples per class also rendered to WAV via Griffin-Lim.
  std::size_t audio_examples = 0;
};

/// Whole-pipeline configuration, loaded from one JSON document.
struct PipelineConfig {
  int version = kConfigVersion;
  PathsConfig paths;
  std::uint64_t seed = 0;
  DataConfig data;
  DspConfig dsp;
  FeaturesConfig features;
  acgan::GanConfig gan;
  classifier::ClassifierConfig classifier;
  AugmentationConfig augmentation;

  /// Sets the root seed and the model seeds derived from it.
  void set_seed(std::uint64_t root);
  void validate() const;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError with the
/// dotted path of the first offending field.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
/// Throws IoError if unreadable and ConfigError if not valid JSON.
PipelineConfig load_config(const std::filesystem::path& path);

/// Round-trips through parse_config (paths are written absolute).
nlohmann::json to_json(const PipelineConfig& cfg);

}  // namespace coughgan
