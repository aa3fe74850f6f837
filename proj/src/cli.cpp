#include "coughgan/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "coughgan/acgan.hpp"
#include "coughgan/audio_io.hpp"
#include "coughgan/checkpoint.hpp"
#include "coughgan/classifier.hpp"
#include "coughgan/config.hpp"
#include "coughgan/dataset.hpp"
#include "coughgan/dsp.hpp"
#include "coughgan/error.hpp"
#include "coughgan/features.hpp"
#include "coughgan/plot.hpp"
#include "coughgan/rng.hpp"

namespace coughgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigFailure;
  if (dynamic_cast<const TrainingError*>(&e)) return kTrainingFailure;
  if (dynamic_cast<const IoError*>(&e)) return kIoFailure;
  if (dynamic_cast<const DataError*>(&e)) return kDataFailure;
  if (dynamic_cast<const json::exception*>(&e)) return kDataFailure;
  return kFailure;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"preprocess", "featurize", "train-gan", "synth",
                                              "train-clf",  "eval",      "plot",      "stats"};
  return names;
}

namespace {

const char* const kSplits[] = {"train", "validation", "test"};

struct Context {
  const Options& opts;
  PipelineConfig cfg;
  std::ostream& out;
  std::ostream& err;

  fs::path work(const std::string& sub) const { return cfg.paths.work_dir / sub; }

  json snapshot() const {
    json args = json::object();
    if (opts.augment) args["augment"] = opts.augment->string();
    if (opts.count) args["count"] = *opts.count;
    if (opts.class_label) args["class"] = *opts.class_label;
    if (opts.checkpoint) args["checkpoint"] = opts.checkpoint->string();
    if (!opts.inputs.empty()) {
      json in = json::array();
      for (const auto& p : opts.inputs) in.push_back(p.string());
      args["input"] = in;
    }
    if (opts.output) args["output"] = opts.output->string();
    return {{"command", opts.command}, {"seed", cfg.seed}, {"args", args}, {"config", to_json(cfg)}};
  }
};

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_file(const fs::path& path, const std::string& bytes) {
  make_dirs(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

void store_checkpoint(const ModelCheckpoint& ckpt, const fs::path& path) {
  make_dirs(path.parent_path());
  save_checkpoint(ckpt, path);
}

void store_wav(const AudioClip& clip, const fs::path& path) {
  make_dirs(path.parent_path());
  write_wav(clip, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string segment_file(const std::string& uuid, std::size_t index) {
  return uuid + "_" + std::to_string(index) + ".wav";
}

/// Manifest records after the quality filter, in uuid order.
std::vector<ManifestRecord> selected_records(const Context& c) {
  auto records = filter_manifest(load_manifest(c.cfg.paths.manifest), c.cfg.data.min_cough_detected,
                                 c.cfg.data.require_ssl);
  std::vector<ManifestRecord> labelled;
  for (auto& r : records) {
    if (class_label(r, c.cfg.data.labels)) labelled.push_back(std::move(r));
    else c.err << "warning: " << r.uuid << " has no usable label, skipped\n";
  }
  std::sort(labelled.begin(), labelled.end(), [](const auto& a, const auto& b) { return a.uuid < b.uuid; });
  for (std::size_t i = 1; i < labelled.size(); ++i)
    if (labelled[i].uuid == labelled[i - 1].uuid) throw DataError("duplicate uuid '" + labelled[i].uuid + "'");
  if (!c.cfg.paths.audio_dir.empty())
    for (auto& r : labelled) r.audio_path = c.cfg.paths.audio_dir / r.audio_path.filename();
  return labelled;
}

std::uint64_t dsp_seed(const Context& c, std::string_view name) {
  return Rng::derive_seed(Rng::derive_seed(c.cfg.seed, "dsp"), name);
}

std::vector<std::string> class_list(const Context& c) { return class_names(c.cfg.data.labels); }

LabeledSet load_set(const fs::path& path) { return from_checkpoint(load_checkpoint(path)); }

json counts_json(const Context& c, const LabeledSet& set) {
  const auto names = class_list(c);
  const auto counts = set.class_counts();
  json j = json::object();
  for (std::size_t k = 0; k < names.size(); ++k) j[names[k]] = k < counts.size() ? counts[k] : 0;
  return j;
}

std::string expected_test_hash(const Context& c) {
  const json summary = json::parse(read_file(c.work("features") / "summary.json"));
  return summary.at("test_hash").get<std::string>();
}

/// The held-out test set, checked against the hash recorded at featurize time.
LabeledSet checked_test_set(const Context& c) {
  LabeledSet test = load_set(c.work("features") / "test.acgn");
  const std::string hash = dataset_hash(test);
  if (hash != expected_test_hash(c))
    throw DataError("test set hash " + hash + " differs from the one recorded by featurize");
  return test;
}

// ---------------------------------------------------------------------------

int cmd_preprocess(Context& c) {
  auto records = selected_records(c);
  if (c.cfg.data.balance) records = balance_classes(records, dsp_seed(c, "balance"), c.cfg.data.labels);

  const fs::path dir = c.work("segments");
  make_dirs(dir);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".wav") fs::remove(entry.path());

  std::string index = "uuid,segment_index,start_sample,end_sample\n";
  std::size_t n_segments = 0;
  json skipped = json::array();
  for (const auto& r : records) {
    AudioClip clip;
    try {
      clip = dsp::preprocess(read_wav(r.audio_path), c.cfg.dsp.preprocess);
    } catch (const Error& e) {
      c.err << "skip " << r.uuid << ": " << e.what() << "\n";
      skipped.push_back({{"uuid", r.uuid}, {"reason", e.what()}});
      continue;
    }
    const auto bounds = dsp::segment_coughs(clip, c.cfg.dsp.segmentation);
    for (std::size_t k = 0; k < bounds.size(); ++k) {
      store_wav(dsp::extract_segment(clip, bounds[k]), dir / segment_file(r.uuid, k));
      index += r.uuid + "," + std::to_string(k) + "," + std::to_string(bounds[k].start_sample) + "," +
               std::to_string(bounds[k].end_sample) + "\n";
    }
    n_segments += bounds.size();
  }
  write_file(dir / "index.csv", index);
  json run = c.snapshot();
  run["clips"] = records.size() - skipped.size();
  run["segments"] = n_segments;
  run["skipped"] = skipped;
  write_json(dir / "run.json", run);
  c.out << "preprocess: " << records.size() - skipped.size() << " clips, " << n_segments << " segments";
  if (!skipped.empty()) {
    c.out << ", " << skipped.size() << " skipped\n";
    return kDataFailure;
  }
  c.out << "\n";
  return kSuccess;
}

struct SegmentRow {
  std::string uuid;
  std::size_t index = 0;
};

std::vector<SegmentRow> read_segment_index(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "uuid,segment_index,start_sample,end_sample")
    throw FormatError(path.string() + ": unexpected header");
  std::vector<SegmentRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream cells(line);
    SegmentRow row;
    std::string index;
    if (!std::getline(cells, row.uuid, ',') || !std::getline(cells, index, ',') || row.uuid.empty())
      throw FormatError(path.string() + ": malformed line " + std::to_string(line_no));
    try {
      row.index = std::stoul(index);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed line " + std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_featurize(Context& c) {
  const fs::path seg_dir = c.work("segments");
  const auto rows = read_segment_index(seg_dir / "index.csv");
  std::map<std::string, std::vector<std::size_t>> by_uuid;
  for (const auto& r : rows) by_uuid[r.uuid].push_back(r.index);

  std::vector<ManifestRecord> records;
  for (auto& r : selected_records(c))
    if (by_uuid.count(r.uuid)) records.push_back(std::move(r));
  for (const auto& [uuid, _] : by_uuid)
    if (std::none_of(records.begin(), records.end(), [&](const auto& r) { return r.uuid == uuid; }))
      c.err << "warning: segments of " << uuid << " have no usable manifest label, skipped\n";

  // Splitting by clip keeps all segments of one recording in the same part.
  const DatasetSplit split = stratified_split(records, c.cfg.data.split, dsp_seed(c, "split"), c.cfg.data.labels);
  for (int cls : split.warnings)
    c.err << "warning: class " << class_list(c)[static_cast<std::size_t>(cls)]
          << " is too small to stratify; placed in train\n";

  const std::size_t n_classes = class_list(c).size();
  const std::vector<ManifestRecord>* parts[] = {&split.train, &split.validation, &split.test};
  std::string labels_csv = "id,uuid,split,label\n";
  json summary = c.snapshot();
  const fs::path dir = c.work("features");
  std::size_t skipped = 0;
  for (int p = 0; p < 3; ++p) {
    std::vector<ManifestRecord> part = *parts[p];
    std::sort(part.begin(), part.end(), [](const auto& a, const auto& b) { return a.uuid < b.uuid; });
    LabeledSet set;
    set.n_classes = n_classes;
    for (const auto& r : part) {
      const int label = *class_label(r, c.cfg.data.labels);
      for (std::size_t k : by_uuid[r.uuid]) {
        features::UnitSpectrogram unit;
        try {
          const AudioClip seg = read_wav(seg_dir / segment_file(r.uuid, k));
          unit = features::scale_to_unit(features::mel_spectrogram_db(seg, c.cfg.features.top_db));
        } catch (const DomainError& e) {
          c.err << "warning: segment " << r.uuid << "#" << k << ": " << e.what() << ", skipped\n";
          ++skipped;
          continue;
        }
        const std::string id = r.uuid + "#" + std::to_string(k);
        set.add(unit.values, label, Provenance::real, id);
        labels_csv += id + "," + r.uuid + "," + kSplits[p] + "," + std::to_string(label) + "\n";
      }
    }
    ModelCheckpoint ckpt = to_checkpoint(set);
    ckpt.metadata["split"] = kSplits[p];
    ckpt.metadata["run"] = c.snapshot();
    store_checkpoint(ckpt, dir / (std::string(kSplits[p]) + ".acgn"));
    summary["splits"][kSplits[p]] = {{"clips", part.size()}, {"records", set.size()}, {"classes", counts_json(c, set)},
                                     {"hash", dataset_hash(set)}};
    if (p == 2) summary["test_hash"] = dataset_hash(set);
    c.out << "featurize: " << kSplits[p] << " " << set.size() << " records " << counts_json(c, set).dump() << "\n";
  }
  summary["skipped_segments"] = skipped;
  write_file(dir / "labels.csv", labels_csv);
  write_json(dir / "summary.json", summary);
  return kSuccess;
}

std::string epoch_label(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%06zu", epoch);
  return buf;
}

int cmd_train_gan(Context& c) {
  const LabeledSet train = load_set(c.work("features") / "train.acgn");
  const fs::path dir = c.work("gan");
  make_dirs(dir);
  const json run = c.snapshot();
  auto save_pair = [&](acgan::GanState& s, std::size_t epoch, const fs::path& gen_path, const fs::path& disc_path) {
    ModelCheckpoint g = acgan::generator_checkpoint(s, epoch), d = acgan::discriminator_checkpoint(s, epoch);
    g.metadata["run"] = run;
    d.metadata["run"] = run;
    store_checkpoint(g, gen_path);
    store_checkpoint(d, disc_path);
  };

  acgan::TrainOptions topts;
  const std::size_t report_every = std::max<std::size_t>(1, c.cfg.gan.epochs / 20);
  topts.on_epoch = [&](const acgan::EpochRecord& r) {
    if ((r.epoch + 1) % report_every && r.epoch + 1 != c.cfg.gan.epochs) return;
    char buf[192];
    std::snprintf(buf, sizeof buf, "epoch %zu d_real %.4f d_fake %.4f g %.4f p_real %.3f p_fake %.3f acc %.3f\n",
                  r.epoch + 1, r.disc_real_loss, r.disc_fake_loss, r.gen_loss, r.p_real, r.p_fake, r.real_class_acc);
    c.out << buf << std::flush;
  };
  topts.on_checkpoint = [&](std::size_t epoch, acgan::GanState& s) {
    const std::string tag = epoch_label(epoch);
    save_pair(s, epoch, dir / "checkpoints" / ("generator_" + tag + ".acgn"),
              dir / "checkpoints" / ("discriminator_" + tag + ".acgn"));
  };
  if (c.cfg.gan.checkpoint_every) make_dirs(dir / "checkpoints");

  acgan::TrainResult result = acgan::train_acgan(train, c.cfg.gan, topts);
  save_pair(result.state, result.history.size(), dir / "generator.acgn", dir / "discriminator.acgn");
  write_file(dir / "history.csv", acgan::history_csv(result.history));
  json meta = run;
  meta["train_hash"] = dataset_hash(train);
  meta["epochs"] = result.history.size();
  write_json(dir / "run.json", meta);
  c.out << "train-gan: " << result.history.size() << " epochs on " << train.size() << " samples\n";
  return kSuccess;
}

int resolve_class(const Context& c, const std::string& text) {
  const auto names = class_list(c);
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == text) return static_cast<int>(k);
  std::size_t used = 0;
  int index = -1;
  try {
    index = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == text.size() && index >= 0 && static_cast<std::size_t>(index) < names.size()) return index;
  std::string known;
  for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("--class: unknown class '" + text + "' (expected one of " + known + ")");
}

std::string file_token(const std::string& name) {
  std::string out;
  for (char ch : name)
    out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ? static_cast<char>(std::tolower(ch)) : '_';
  return out;
}

int cmd_synth(Context& c) {
  const std::size_t count = c.opts.count ? *c.opts.count : c.cfg.augmentation.count_per_class.value_or(0);
  if (!count) throw ConfigError("synth needs --count or augmentation.count_per_class");
  const fs::path ckpt_path = c.opts.checkpoint.value_or(c.work("gan") / "generator.acgn");
  acgan::Generator gen = acgan::load_generator(load_checkpoint(ckpt_path));
  if (gen.cfg.n_classes != class_list(c).size())
    throw ConfigError("generator checkpoint has " + std::to_string(gen.cfg.n_classes) + " classes");

  std::vector<int> classes;
  if (c.opts.class_label) classes.push_back(resolve_class(c, *c.opts.class_label));
  else
    for (std::size_t k = 0; k < gen.cfg.n_classes; ++k) classes.push_back(static_cast<int>(k));

  const std::uint64_t root = Rng::derive_seed(c.cfg.seed, "synth");
  LabeledSet all;
  all.n_classes = gen.cfg.n_classes;
  const fs::path dir = c.work("synth");
  for (int cls : classes) {
    const LabeledSet part =
        acgan::synthesize(gen, cls, count, Rng::derive_seed(root, "class-" + std::to_string(cls)));
    for (std::size_t i = 0; i < part.size(); ++i) {
      all.add(part.sample(i), part.labels[i], Provenance::synthetic, part.ids[i]);
      if (i < c.cfg.augmentation.audio_examples) {
        features::UnitSpectrogram unit;
        std::copy(part.sample(i).begin(), part.sample(i).end(), unit.values.begin());
        const AudioClip audio = dsp::normalize_peak(
            features::griffin_lim(features::unscale(unit), c.cfg.features.griffin_lim_iterations));
        store_wav(audio, dir / "audio" / (part.ids[i] + ".wav"));
      }
    }
  }
  ModelCheckpoint out = to_checkpoint(all);
  out.metadata["run"] = c.snapshot();
  out.metadata["generator"] = ckpt_path.string();
  const std::string name =
      c.opts.class_label ? "synthetic_" + file_token(class_list(c)[static_cast<std::size_t>(classes[0])]) : "synthetic";
  const fs::path path = c.opts.output.value_or(dir / (name + ".acgn"));
  store_checkpoint(out, path);
  c.out << "synth: " << all.size() << " records " << counts_json(c, all).dump() << " -> " << path.string() << "\n";
  return kSuccess;
}

json split_metrics(classifier::Classifier& model, const LabeledSet& val, const LabeledSet& test) {
  return {{"validation", classifier::to_json(classifier::evaluate(model, val))},
          {"test", classifier::to_json(classifier::evaluate(model, test))}};
}

int cmd_train_clf(Context& c) {
  const fs::path features_dir = c.work("features");
  LabeledSet train = load_set(features_dir / "train.acgn");
  const LabeledSet val = load_set(features_dir / "validation.acgn");
  const LabeledSet test = checked_test_set(c);
  const std::string test_hash = dataset_hash(test);

  json run = c.snapshot();
  run["test_hash"] = test_hash;
  run["real_train_hash"] = dataset_hash(train);
  if (c.opts.augment) {
    const LabeledSet synthetic = load_set(*c.opts.augment);
    run["augment_hash"] = dataset_hash(synthetic);
    train = classifier::augment_training_set(train, synthetic, Rng::derive_seed(c.cfg.classifier.seed, "augment"));
  }
  run["train"] = {{"records", train.size()},
                  {"synthetic", train.count(Provenance::synthetic)},
                  {"classes", counts_json(c, train)}};

  const fs::path dir = c.work(c.opts.augment ? "classifier_augmented" : "classifier");
  make_dirs(dir);
  const std::size_t report_every = std::max<std::size_t>(1, c.cfg.classifier.epochs / 20);
  auto on_epoch = [&](const classifier::HistoryRow& r) {
    if ((r.epoch + 1) % report_every && r.epoch + 1 != c.cfg.classifier.epochs) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.4f acc %.3f val_loss %.4f val_acc %.3f\n", r.epoch + 1,
                  r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    c.out << buf << std::flush;
  };
  classifier::TrainOutput result = classifier::train_classifier(train, val, c.cfg.classifier, on_epoch);

  if (dataset_hash(test) != test_hash) throw DataError("test set changed during training");
  ModelCheckpoint final_ckpt =
      classifier::classifier_checkpoint(result.final_model, &result.optimizer, result.history.size());
  ModelCheckpoint best_ckpt = classifier::classifier_checkpoint(result.best_model, nullptr, result.best_epoch + 1);
  final_ckpt.metadata["run"] = run;
  best_ckpt.metadata["run"] = run;
  store_checkpoint(final_ckpt, dir / "classifier.acgn");
  store_checkpoint(best_ckpt, dir / "classifier_best.acgn");
  write_file(dir / "history.csv", classifier::history_csv(result.history));

  json metrics = run;
  metrics["final"] = split_metrics(result.final_model, val, test);
  metrics["best"] = split_metrics(result.best_model, val, test);
  metrics["best"]["epoch"] = result.best_epoch + 1;
  write_json(dir / "metrics.json", metrics);
  c.out << "train-clf: test accuracy " << metrics["final"]["test"]["accuracy"].dump() << " (best-val checkpoint "
        << metrics["best"]["test"]["accuracy"].dump() << ")\n";
  return kSuccess;
}

int cmd_eval(Context& c) {
  const fs::path ckpt_path = c.opts.checkpoint.value_or(c.work("classifier") / "classifier.acgn");
  classifier::Classifier model = classifier::load_classifier(load_checkpoint(ckpt_path));
  const bool custom = !c.opts.inputs.empty();
  const LabeledSet test = custom ? load_set(c.opts.inputs.front()) : checked_test_set(c);
  const classifier::EvalMetrics m = classifier::evaluate(model, test);

  json doc = c.snapshot();
  doc["checkpoint"] = ckpt_path.string();
  doc["test_hash"] = dataset_hash(test);
  doc["metrics"] = classifier::to_json(m);
  const fs::path path = c.opts.output.value_or(c.work("eval") / (ckpt_path.parent_path().filename().string() + "_" +
                                                                  ckpt_path.stem().string() + ".json"));
  write_json(path, doc);
  c.out << "accuracy " << doc["metrics"]["accuracy"].dump() << "\n";
  c.out << "metrics -> " << path.string() << "\n";
  return kSuccess;
}

struct Chart {
  std::string name;
  std::string title;
  std::vector<std::string> columns;
};

std::vector<Chart> charts_for(const plot::CsvTable& t) {
  if (t.column("gen_loss") != std::string::npos)
    return {{"losses", "Discriminator and generator loss", {"disc_real_loss", "disc_fake_loss", "gen_loss"}},
            {"probabilities", "Mean discriminator adversarial probability", {"p_real", "p_fake"}},
            {"class_accuracy", "Discriminator class accuracy on real samples", {"real_class_acc"}},
            {"noise", "Instance noise variance", {"noise_var"}}};
  if (t.column("val_acc") != std::string::npos)
    return {{"accuracy", "Classifier accuracy", {"train_acc", "val_acc"}},
            {"loss", "Classifier loss", {"train_loss", "val_loss"}}};
  return {{"curves", "History", {t.header.begin() + 1, t.header.end()}}};
}

std::size_t plot_history(const fs::path& csv, const fs::path& out_dir, const std::string& prefix) {
  const plot::CsvTable t = plot::parse_csv(read_file(csv));
  if (t.header.size() < 2) throw FormatError(csv.string() + ": need an x column and at least one series");
  std::size_t written = 0;
  for (const auto& chart : charts_for(t)) {
    std::vector<plot::Series> series;
    for (const auto& col : chart.columns) {
      const std::size_t k = t.column(col);
      if (k == std::string::npos) throw FormatError(csv.string() + ": missing column " + col);
      series.push_back({col, t.values(k)});
    }
    write_file(out_dir / (prefix + "_" + chart.name + ".svg"),
               plot::line_chart_svg(chart.title, t.header[0], t.values(0), series));
    ++written;
  }
  return written;
}

void plot_records(const fs::path& container, const fs::path& out_dir, const std::string& prefix) {
  const LabeledSet set = load_set(container);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, set.size()); ++i) rows.push_back(i);
  write_file(out_dir / (prefix + "_grid.png"), plot::encode_png(plot::spectrogram_grid(set, rows, 4)));
}

std::string plot_prefix(const fs::path& input) {
  const std::string parent = input.parent_path().filename().string();
  return (parent.empty() ? "" : parent + "_") + input.stem().string();
}

int cmd_plot(Context& c) {
  const fs::path out_dir = c.opts.output.value_or(c.work("plots"));
  make_dirs(out_dir);
  std::size_t written = 0;
  if (!c.opts.inputs.empty()) {
    for (const auto& in : c.opts.inputs) {
      if (in.extension() == ".csv") written += plot_history(in, out_dir, plot_prefix(in));
      else {
        plot_records(in, out_dir, plot_prefix(in));
        ++written;
      }
    }
  } else {
    for (const char* sub : {"gan", "classifier", "classifier_augmented"})
      if (fs::exists(c.work(sub) / "history.csv"))
        written += plot_history(c.work(sub) / "history.csv", out_dir, std::string(sub) + "_history");
    const fs::path real = c.work("features") / "train.acgn", synth = c.work("synth") / "synthetic.acgn";
    if (fs::exists(real) && fs::exists(synth)) {
      write_file(out_dir / "real_vs_synthetic.png",
                 plot::encode_png(plot::comparison_grid(load_set(real), load_set(synth), 4)));
      ++written;
    }
  }
  write_json(out_dir / "run.json", c.snapshot());
  c.out << "plot: " << written << " images -> " << out_dir.string() << "\n";
  return kSuccess;
}

json stats_json(const ManifestStats& s) {
  return {{"total", s.total},
          {"class_counts", s.class_counts},
          {"status_counts", s.status_counts},
          {"status_ssl_counts", s.status_ssl_counts},
          {"cough_detected_histogram", s.cough_detected_histogram}};
}

int cmd_stats(Context& c) {
  const auto all = load_manifest(c.cfg.paths.manifest);
  const auto kept = filter_manifest(all, c.cfg.data.min_cough_detected, c.cfg.data.require_ssl);
  json doc = c.snapshot();
  doc["manifest"] = stats_json(manifest_stats(all));
  doc["filtered"] = stats_json(manifest_stats(kept));
  write_json(c.work("stats.json"), doc);
  c.out << json{{"manifest", doc["manifest"]}, {"filtered", doc["filtered"]}}.dump(2) << "\n";
  return kSuccess;
}

}  // namespace

int run(const Options& opts, std::ostream& out, std::ostream& err) {
  try {
    Context c{opts, load_config(opts.config), out, err};
    if (opts.seed) c.cfg.set_seed(*opts.seed);
    if (opts.command == "preprocess") return cmd_preprocess(c);
    if (opts.command == "featurize") return cmd_featurize(c);
    if (opts.command == "train-gan") return cmd_train_gan(c);
    if (opts.command == "synth") return cmd_synth(c);
    if (opts.command == "train-clf") return cmd_train_clf(c);
    if (opts.command == "eval") return cmd_eval(c);
    if (opts.command == "plot") return cmd_plot(c);
    if (opts.command == "stats") return cmd_stats(c);
    err << "unknown command '" << opts.command << "'\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << opts.command << ": " << e.what() << "\n";
    return code;
  }
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cough spectrogram ACGAN pipeline"};
  Options opts;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string augment, class_label, checkpoint, output;
  std::vector<std::string> inputs;
  app.add_option("command", opts.command, "Pipeline stage")->required()->check(CLI::IsMember(command_names()));
  app.add_option("--config", opts.config, "Pipeline config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Root seed, overriding the config");
  auto* augment_opt = app.add_option("--augment", augment, "train-clf: synthetic container to mix in");
  auto* count_opt = app.add_option("--count", count, "synth: samples per class")->check(CLI::PositiveNumber);
  auto* class_opt = app.add_option("--class", class_label, "synth: class name or index");
  auto* ckpt_opt = app.add_option("--checkpoint", checkpoint, "synth/eval: model checkpoint");
  app.add_option("--input", inputs, "eval/plot: input files");
  auto* output_opt = app.add_option("--output", output, "Output file (synth, eval) or directory (plot)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int rc = app.exit(e, msg, msg);
    (rc ? err : out) << msg.str();
    return rc ? kConfigFailure : kSuccess;
  }
  if (*seed_opt) opts.seed = seed;
  if (*augment_opt) opts.augment = augment;
  if (*count_opt) opts.count = count;
  if (*class_opt) opts.class_label = class_label;
  if (*ckpt_opt) opts.checkpoint = checkpoint;
  if (*output_opt) opts.output = output;
  for (const auto& in : inputs) opts.inputs.emplace_back(in);
  return run(opts, out, err);
}

}  // namespace coughgan::cli
