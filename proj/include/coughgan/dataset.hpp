#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coughgan/checkpoint.hpp"
#include "coughgan/features.hpp"
#include "coughgan/tensor.hpp"

namespace coughgan {

enum class Provenance { real = 0, synthetic = 1 };

/// Labelled 1x128x24 unit spectrograms stored contiguously.
struct LabeledSet {
  std::size_t n_classes = 2;
  std::vector<double> values;  // size() * kSpectrogramSize entries
  std::vector<int> labels;
  std::vector<Provenance> provenance;
  std::vector<std::string> ids;  // segment or sample identifiers

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  void add(std::span<const double> spectrogram, int label, Provenance origin, std::string id);
  std::span<const double> sample(std::size_t i) const;

  /// [n, 1, 128, 24] images and [n] labels for the given rows.
  Tensor images(std::span<const std::size_t> rows) const;
  Tensor label_tensor(std::span<const std::size_t> rows) const;

  std::vector<std::size_t> class_counts() const;
  std::size_t count(Provenance origin) const;

  /// Throws DataError on inconsistent sizes, labels outside [0, n_classes)
  /// or values outside [-1, 1].
  void validate() const;
};

/// FNV-1a over labels and raw spectrogram bytes, as 16 hex digits.
std::string dataset_hash(const LabeledSet& set);

/// Entries "values" [n,1,128,24], "labels" [n], "provenance" [n]; ids and
/// class count go into metadata.
ModelCheckpoint to_checkpoint(const LabeledSet& set);
LabeledSet from_checkpoint(const ModelCheckpoint& ckpt);

/// One-hot [n, n_classes] encoding of a label tensor.
Tensor one_hot(const Tensor& labels, std::size_t n_classes);

}  // namespace coughgan
