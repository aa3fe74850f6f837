#include "coughgan/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "coughgan/error.hpp"

namespace coughgan {

using features::kFrames;
using features::kMels;
using features::kSpectrogramSize;

void LabeledSet::add(std::span<const double> spectrogram, int label, Provenance origin, std::string id) {
  if (spectrogram.size() != kSpectrogramSize)
    throw ShapeError("spectrogram has " + std::to_string(spectrogram.size()) + " values, expected " +
                     std::to_string(kSpectrogramSize));
  if (label < 0 || static_cast<std::size_t>(label) >= n_classes)
    throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(n_classes) + ")");
  values.insert(values.end(), spectrogram.begin(), spectrogram.end());
  labels.push_back(label);
  provenance.push_back(origin);
  ids.push_back(std::move(id));
}

std::span<const double> LabeledSet::sample(std::size_t i) const {
  return std::span<const double>(values).subspan(i * kSpectrogramSize, kSpectrogramSize);
}

Tensor LabeledSet::images(std::span<const std::size_t> rows) const {
  Tensor t({rows.size(), 1, kMels, kFrames});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto s = sample(rows[i]);
    std::copy(s.begin(), s.end(), t.ptr() + i * kSpectrogramSize);
  }
  return t;
}

Tensor LabeledSet::label_tensor(std::span<const std::size_t> rows) const {
  Tensor t({rows.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) t[i] = labels[rows[i]];
  return t;
}

std::vector<std::size_t> LabeledSet::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

std::size_t LabeledSet::count(Provenance origin) const {
  return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), origin));
}

void LabeledSet::validate() const {
  const std::size_t n = labels.size();
  if (values.size() != n * kSpectrogramSize || provenance.size() != n || ids.size() != n)
    throw DataError("labelled set has inconsistent column lengths");
  if (n_classes == 0) throw DataError("labelled set has no classes");
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(n_classes) + ")");
  for (double v : values)
    if (!(v >= -1.0 && v <= 1.0)) throw DataError("spectrogram value outside [-1, 1]");
}

std::string dataset_hash(const LabeledSet& set) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t n = set.size();
  mix(&n, sizeof n);
  for (int l : set.labels) {
    const std::int32_t v = l;
    mix(&v, sizeof v);
  }
  mix(set.values.data(), set.values.size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelCheckpoint to_checkpoint(const LabeledSet& set) {
  set.validate();
  ModelCheckpoint ckpt;
  ckpt.metadata["kind"] = "spectrograms";
  ckpt.metadata["n_classes"] = set.n_classes;
  ckpt.metadata["ids"] = set.ids;
  ckpt.metadata["count"] = set.size();
  if (set.empty()) return ckpt;
  ckpt.add("values", Tensor({set.size(), 1, kMels, kFrames}, set.values));
  Tensor labels({set.size()}), origin({set.size()});
  for (std::size_t i = 0; i < set.size(); ++i) {
    labels[i] = set.labels[i];
    origin[i] = static_cast<double>(set.provenance[i]);
  }
  ckpt.add("labels", std::move(labels));
  ckpt.add("provenance", std::move(origin));
  return ckpt;
}

LabeledSet from_checkpoint(const ModelCheckpoint& ckpt) {
  LabeledSet set;
  try {
    if (ckpt.metadata.value("kind", "") != "spectrograms") throw FormatError("container does not hold spectrograms");
    set.n_classes = ckpt.metadata.at("n_classes").get<std::size_t>();
    set.ids = ckpt.metadata.at("ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("spectrogram container metadata: ") + e.what());
  }
  if (set.ids.empty()) return set;
  const Tensor& values = ckpt.at("values");
  const Tensor& labels = ckpt.at("labels");
  const Tensor& origin = ckpt.at("provenance");
  const std::size_t n = set.ids.size();
  if (values.shape() != Shape{n, 1, kMels, kFrames} || labels.size() != n || origin.size() != n)
    throw FormatError("spectrogram container entries disagree with its id list");
  set.values = values.values();
  for (std::size_t i = 0; i < n; ++i) {
    set.labels.push_back(static_cast<int>(labels[i]));
    set.provenance.push_back(origin[i] == 0.0 ? Provenance::real : Provenance::synthetic);
  }
  set.validate();
  return set;
}

Tensor one_hot(const Tensor& labels, std::size_t n_classes) {
  Tensor t({labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || c >= n_classes) throw DataError("label outside [0, " + std::to_string(n_classes) + ")");
    t[i * n_classes + c] = 1.0;
  }
  return t;
}

}  // namespace coughgan
