#include "coughgan/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "coughgan/error.hpp"
#include "coughgan/json_fields.hpp"
#include "coughgan/rng.hpp"

namespace coughgan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& text) {
  if (text.empty()) return {};
  const fs::path p(text);
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

void reject_seed(const json& j, const std::string& section) {
  if (j.is_object() && j.contains("seed"))
    throw ConfigError(section + ".seed: model seeds derive from the top-level seed");
}

PathsConfig parse_paths(JsonFields f, const fs::path& base) {
  PathsConfig p;
  std::string manifest, audio_dir, work_dir;
  f.require("manifest", manifest);
  f.read("audio_dir", audio_dir);
  f.require("work_dir", work_dir);
  f.finish();
  if (manifest.empty()) throw ConfigError(f.field("manifest") + ": must not be empty");
  if (work_dir.empty()) throw ConfigError(f.field("work_dir") + ": must not be empty");
  p.manifest = resolve(base, manifest);
  p.audio_dir = resolve(base, audio_dir);
  p.work_dir = resolve(base, work_dir);
  return p;
}

DataConfig parse_data(JsonFields f) {
  DataConfig d;
  f.read("min_cough_detected", d.min_cough_detected);
  f.read("require_ssl", d.require_ssl);
  f.read("balance", d.balance);
  std::vector<double> split(d.split.begin(), d.split.end());
  f.read("split", split);
  if (split.size() != 3) throw ConfigError(f.field("split") + ": expected three ratios");
  std::copy(split.begin(), split.end(), d.split.begin());
  std::string labels = "status_ssl";
  f.read("labels", labels);
  if (labels == "status_ssl") d.labels = LabelSource::status_ssl;
  else if (labels == "status") d.labels = LabelSource::status;
  else throw ConfigError(f.field("labels") + ": expected \"status_ssl\" or \"status\"");
  f.finish();
  return d;
}

DspConfig parse_dsp(JsonFields f) {
  DspConfig d;
  f.read("target_rate_hz", d.preprocess.target_rate_hz);
  f.read("filter_order", d.preprocess.filter_order);
  f.read("cutoff_hz", d.preprocess.cutoff_hz);
  f.read("high_rms_factor", d.segmentation.high_rms_factor);
  f.read("low_rms_factor", d.segmentation.low_rms_factor);
  f.read("pad_s", d.segmentation.pad_s);
  f.read("hangover_s", d.segmentation.hangover_s);
  f.read("min_segment_s", d.segmentation.min_segment_s);
  f.finish();
  return d;
}

FeaturesConfig parse_features(JsonFields f) {
  FeaturesConfig c;
  f.read("top_db", c.top_db);
  f.read("griffin_lim_iterations", c.griffin_lim_iterations);
  f.finish();
  return c;
}

AugmentationConfig parse_augmentation(JsonFields f) {
  AugmentationConfig a;
  if (f.has("count_per_class")) {
    std::size_t n = 0;
    f.read("count_per_class", n);
    a.count_per_class = n;
  }
  f.read("audio_examples", a.audio_examples);
  f.finish();
  return a;
}

const char* label_source_name(LabelSource s) { return s == LabelSource::status ? "status" : "status_ssl"; }

}  // namespace

void PipelineConfig::set_seed(std::uint64_t root) {
  seed = root;
  gan.seed = Rng::derive_seed(root, "gan");
  classifier.seed = Rng::derive_seed(root, "clf");
}

void PipelineConfig::validate() const {
  if (version != kConfigVersion)
    throw ConfigError("version: expected " + std::to_string(kConfigVersion) + ", got " + std::to_string(version));
  if (!(data.min_cough_detected >= 0.0 && data.min_cough_detected <= 1.0))
    throw ConfigError("data.min_cough_detected: must lie in [0, 1]");
  double sum = 0.0;
  for (double r : data.split) {
    if (!(r > 0.0)) throw ConfigError("data.split: ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("data.split: ratios must sum to 1");
  if (dsp.preprocess.target_rate_hz != features::kSampleRate)
    throw ConfigError("dsp.target_rate_hz: features require " + std::to_string(features::kSampleRate) + " Hz");
  if (dsp.preprocess.filter_order <= 0 || dsp.preprocess.filter_order % 2)
    throw ConfigError("dsp.filter_order: must be a positive even integer");
  if (!(dsp.preprocess.cutoff_hz > 0.0)) throw ConfigError("dsp.cutoff_hz: must be positive");
  try {
    dsp::validate(dsp.segmentation);
  } catch (const Error& e) {
    throw ConfigError(std::string("dsp: ") + e.what());
  }
  if (!(features.top_db > 0.0 && features.top_db <= features::kTopDb))
    throw ConfigError("features.top_db: must lie in (0, 80]");
  if (features.griffin_lim_iterations < 1) throw ConfigError("features.griffin_lim_iterations: must be at least 1");
  if (augmentation.count_per_class && !*augmentation.count_per_class)
    throw ConfigError("augmentation.count_per_class: must be positive");
  const std::size_t n_classes = class_names(data.labels).size();
  if (gan.n_classes != n_classes)
    throw ConfigError("gan.n_classes: the label source has " + std::to_string(n_classes) + " classes");
  if (classifier.n_classes() != n_classes)
    throw ConfigError("classifier.n_outputs: does not match the " + std::to_string(n_classes) + "-class label source");
  gan.validate();
  classifier.validate();
}

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  JsonFields f(j, "");
  f.require("version", c.version);
  if (c.version != kConfigVersion)
    throw ConfigError("version: expected " + std::to_string(kConfigVersion) + ", got " + std::to_string(c.version));
  std::uint64_t seed = 0;
  f.read("seed", seed);
  c.paths = parse_paths(f.child("paths"), base_dir);
  if (auto s = f.optional_child("data")) c.data = parse_data(*s);
  if (auto s = f.optional_child("dsp")) c.dsp = parse_dsp(*s);
  if (auto s = f.optional_child("features")) c.features = parse_features(*s);
  if (auto s = f.optional_child("augmentation")) c.augmentation = parse_augmentation(*s);
  if (const json* g = f.raw("gan")) {
    reject_seed(*g, "gan");
    c.gan = acgan::gan_config_from_json(*g, "gan");
  }
  if (const json* k = f.raw("classifier")) {
    reject_seed(*k, "classifier");
    c.classifier = classifier::classifier_config_from_json(*k, "classifier");
  }
  f.finish();
  c.set_seed(seed);
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  json j;
  try {
    j = json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& c) {
  json gan = acgan::to_json(c.gan);
  gan.erase("seed");
  json clf = classifier::to_json(c.classifier);
  clf.erase("seed");
  json aug = {{"audio_examples", c.augmentation.audio_examples}};
  if (c.augmentation.count_per_class) aug["count_per_class"] = *c.augmentation.count_per_class;
  return {
      {"version", c.version},
      {"seed", c.seed},
      {"paths",
       {{"manifest", c.paths.manifest.string()},
        {"audio_dir", c.paths.audio_dir.string()},
        {"work_dir", c.paths.work_dir.string()}}},
      {"data",
       {{"min_cough_detected", c.data.min_cough_detected},
        {"require_ssl", c.data.require_ssl},
        {"balance", c.data.balance},
        {"split", c.data.split},
        {"labels", label_source_name(c.data.labels)}}},
      {"dsp",
       {{"target_rate_hz", c.dsp.preprocess.target_rate_hz},
        {"filter_order", c.dsp.preprocess.filter_order},
        {"cutoff_hz", c.dsp.preprocess.cutoff_hz},
        {"high_rms_factor", c.dsp.segmentation.high_rms_factor},
        {"low_rms_factor", c.dsp.segmentation.low_rms_factor},
        {"pad_s", c.dsp.segmentation.pad_s},
        {"hangover_s", c.dsp.segmentation.hangover_s},
        {"min_segment_s", c.dsp.segmentation.min_segment_s}}},
      {"features", {{"top_db", c.features.top_db}, {"griffin_lim_iterations", c.features.griffin_lim_iterations}}},
      {"gan", gan},
      {"classifier", clf},
      {"augmentation", aug},
  };
}

}  // namespace coughgan
