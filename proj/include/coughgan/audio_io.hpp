#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace coughgan {

/// Mono audio at a fixed sample rate.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Throws DomainError unless the rate is positive and every sample finite.
void validate_clip(const AudioClip& clip);

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float, mono or
/// stereo. Stereo is averaged to mono; PCM16 maps code/32768.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes a mono 32-bit float WAV. Samples must lie in [-1, 1].
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

enum class CoughStatus { healthy, symptomatic, covid19 };

std::string to_string(CoughStatus s);
std::optional<CoughStatus> parse_status(const std::string& text);

struct ManifestRecord {
  std::string uuid;
  std::filesystem::path audio_path;
  double cough_detected = 0.0;
  std::optional<CoughStatus> status;
  std::optional<CoughStatus> status_ssl;  // healthy or covid19 only
  std::optional<double> snr;
};

/// Parses the metadata CSV. Audio paths are resolved against the manifest's
/// directory: an `audio_path` column is used when present, otherwise
/// `<uuid>.wav`.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& csv_path);

/// Keeps records with cough_detected >= threshold and, if `require_ssl`, a
/// status_SSL label. Order is preserved.
std::vector<ManifestRecord> filter_manifest(const std::vector<ManifestRecord>& records,
                                            double min_cough_detected, bool require_ssl);

/// Which manifest column provides the class label.
enum class LabelSource {
  status_ssl,  // two classes: healthy, COVID-19; falls back to a binary `status`
  status,      // three classes: healthy, symptomatic, COVID-19
};

std::vector<std::string> class_names(LabelSource source);

/// Class index of a record under `source`, or nullopt if it has no usable label.
std::optional<int> class_label(const ManifestRecord& r, LabelSource source);

struct DatasetSplit {
  std::vector<ManifestRecord> train;
  std::vector<ManifestRecord> validation;
  std::vector<ManifestRecord> test;
  std::uint64_t seed = 0;
  /// Classes too small to stratify (fewer than 3 records) that went to train.
  std::vector<int> warnings;
};

/// Per-class seeded shuffle followed by a contiguous partition with the given
/// ratios. Every record must carry a label under `source`.
DatasetSplit stratified_split(const std::vector<ManifestRecord>& records,
                              const std::array<double, 3>& ratios, std::uint64_t seed,
                              LabelSource source = LabelSource::status_ssl);

/// Downsamples each class to the minority-class count (seeded, order kept).
std::vector<ManifestRecord> balance_classes(const std::vector<ManifestRecord>& records,
                                            std::uint64_t seed,
                                            LabelSource source = LabelSource::status_ssl);

struct ManifestStats {
  std::size_t total = 0;
  /// Counts per class under LabelSource::status_ssl, plus "unlabeled".
  std::map<std::string, std::size_t> class_counts;
  std::map<std::string, std::size_t> status_counts;      // includes "missing"
  std::map<std::string, std::size_t> status_ssl_counts;  // includes "missing"
  /// cough_detected histogram, ten bins of width 0.1; 1.0 falls in the last.
  std::array<std::size_t, 10> cough_detected_histogram{};
};

ManifestStats manifest_stats(const std::vector<ManifestRecord>& records);

}  // namespace coughgan
