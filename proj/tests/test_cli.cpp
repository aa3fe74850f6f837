#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "coughgan/checkpoint.hpp"
#include "coughgan/cli.hpp"
#include "coughgan/config.hpp"
#include "coughgan/error.hpp"
#include "coughgan/plot.hpp"
#include "fixtures.hpp"
#include "pipeline.hpp"

using namespace coughgan;
using nlohmann::json;
using namespace pipeline;
namespace fs = std::filesystem;

TEST_CASE("config parsing") {
  fixture::TempDir dir("config");
  const json base = tiny_pipeline(dir.path());
  const PipelineConfig c = parse_config(base, dir.path());
  CHECK(c.paths.manifest == dir / "data/manifest.csv");
  CHECK(c.paths.audio_dir.empty());
  CHECK(c.gan.latent_dim == 8);
  CHECK(c.gan.seed == Rng::derive_seed(7, "gan"));
  CHECK(c.classifier.seed == Rng::derive_seed(7, "clf"));
  CHECK(*c.augmentation.count_per_class == 3);
  CHECK(c.dsp.preprocess.target_rate_hz == 12000);
  CHECK(parse_config(to_json(c), "/elsewhere").paths.manifest == c.paths.manifest);
  CHECK(to_json(parse_config(to_json(c), "/elsewhere")) == to_json(c));

  auto expect_error = [&](json j, const std::string& fragment) {
    try {
      parse_config(j, dir.path());
      FAIL("expected a config error for " << fragment);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  json j = base;
  j["gan"]["seed"] = 3;
  expect_error(j, "gan.seed");
  j = base;
  j["version"] = 2;
  expect_error(j, "version");
  j = base;
  j["paths"].erase("work_dir");
  expect_error(j, "work_dir");
  j = base;
  j["colour"] = "blue";
  expect_error(j, "colour");
  j = base;
  j["data"] = {{"split", {0.5, 0.1, 0.1}}};
  expect_error(j, "split");
  j = base;
  j["dsp"] = {{"target_rate_hz", 16000}};
  expect_error(j, "target_rate_hz");
  j = base;
  j["gan"]["n_classes"] = 3;
  expect_error(j, "n_classes");
  j = base;
  j["classifier"]["lr"] = "fast";
  expect_error(j, "classifier.lr");

  fixture::write_text(dir / "broken.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
  ModelCheckpoint c;
  c.metadata = {{"kind", "test"}, {"epoch", 3}};
  Rng rng(1);
  Tensor t({2, 3, 4});
  for (double& v : t.data()) v = rng.normal();
  t[5] = -0.0;
  t[6] = 1e-310;
  c.add("alpha", t);
  c.add("empty-ish", Tensor({1}, {42.0}));
  const std::string bytes = serialize_checkpoint(c);
  CHECK(bytes.substr(0, 4) == "ACGN");
  const ModelCheckpoint back = parse_checkpoint(bytes);
  CHECK(back == c);
  CHECK(std::signbit(back.at("alpha")[5]));
  CHECK(serialize_checkpoint(back) == bytes);

  fixture::TempDir dir("ckpt");
  save_checkpoint(c, dir / "c.acgn");
  CHECK(fixture::read_bytes(dir / "c.acgn") == bytes);
  CHECK(load_checkpoint(dir / "c.acgn") == c);

  for (std::size_t cut : {3ul, 10ul, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, cut)), FormatError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(wrong), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.acgn"), IoError);
  CHECK_THROWS_AS(c.at("beta"), FormatError);
}

TEST_CASE("labeled sets survive the container") {
  const LabeledSet toy = fixture::toy_spectrograms(3, 2);
  const LabeledSet back = from_checkpoint(parse_checkpoint(serialize_checkpoint(to_checkpoint(toy))));
  CHECK(back.values == toy.values);
  CHECK(back.labels == toy.labels);
  CHECK(back.ids == toy.ids);
  CHECK(dataset_hash(back) == dataset_hash(toy));
  LabeledSet changed = toy;
  changed.labels[0] = 1;
  CHECK(dataset_hash(changed) != dataset_hash(toy));
  CHECK(dataset_hash(toy).size() == 16);
}

TEST_CASE("png and svg output") {
  const LabeledSet toy = fixture::toy_spectrograms(4, 2);
  const plot::GrayImage grid = plot::spectrogram_grid(toy, {0, 1, 2, 3, 4, 5, 6, 7}, 4);
  CHECK(grid.width == 4 * 24 + 5 * 2);
  CHECK(grid.height == 2 * 128 + 3 * 2);
  CHECK(grid.pixels[0] == 128);
  const std::string png = plot::encode_png(grid);
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  CHECK(png.substr(12, 4) == "IHDR");
  auto be32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(png[at + i]);
    return v;
  };
  CHECK(be32(16) == grid.width);
  CHECK(be32(20) == grid.height);
  CHECK(png.substr(png.size() - 8, 4) == "IEND");
  CHECK(plot::encode_png(grid) == png);

  const plot::GrayImage cmp = plot::comparison_grid(toy, toy, 3);
  CHECK(cmp.height == 4 * 128 + 5 * 2);

  const std::string svg = plot::line_chart_svg("loss", "epoch", {0, 1, 2}, {{"a", {1.0, 0.5, 0.25}}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("loss") != std::string::npos);
  CHECK(svg == plot::line_chart_svg("loss", "epoch", {0, 1, 2}, {{"a", {1.0, 0.5, 0.25}}}));

  const plot::CsvTable t = plot::parse_csv("epoch,x\n0,1.5\n1,2.5\n");
  CHECK(t.values(1) == std::vector<double>{1.5, 2.5});
  CHECK_THROWS_AS(plot::parse_csv("epoch,x\n0,1.5\n1\n"), FormatError);
}

TEST_CASE("command-line errors map to exit codes") {
  fixture::TempDir dir("cli-errors");
  CHECK(run_cli({"preprocess"}).code == cli::kConfigFailure);
  CHECK(run_cli({"bogus", "--config", "x.json"}).code == cli::kConfigFailure);
  CHECK(run_cli({"stats", "--config", (dir / "missing.json").string()}).code == cli::kIoFailure);
  fixture::write_text(dir / "bad.json", "[1, 2");
  CHECK(run_cli({"stats", "--config", (dir / "bad.json").string()}).code == cli::kConfigFailure);

  json j = tiny_pipeline(dir.path());
  j["gan"]["seed"] = 1;
  const Result seeded = run_cli({"train-gan", "--config", config_file(dir, j)});
  CHECK(seeded.code == cli::kConfigFailure);
  CHECK(seeded.err.find("gan.seed") != std::string::npos);

  // Stages run out of order find no inputs.
  const std::string cfg = config_file(dir, tiny_pipeline(dir.path()));
  CHECK(run_cli({"train-gan", "--config", cfg}).code == cli::kIoFailure);
  CHECK(run_cli({"preprocess", "--config", cfg}).code == cli::kIoFailure);
  CHECK(run_cli({"synth", "--config", cfg, "--count", "0"}).code == cli::kConfigFailure);

  CHECK(cli::exit_code_for(TrainingError("x")) == cli::kTrainingFailure);
  CHECK(cli::exit_code_for(DomainError("x")) == cli::kDataFailure);
  CHECK(cli::exit_code_for(std::runtime_error("x")) == cli::kFailure);
}

TEST_CASE("end-to-end pipeline on generated clips") {
  fixture::TempDir dir("pipeline");
  write_dataset(dir / "data");
  const std::string cfg = config_file(dir, tiny_pipeline(dir.path()));
  const fs::path work = dir / "work";

  const Result stats = run_cli({"stats", "--config", cfg});
  REQUIRE_MESSAGE(stats.code == 0, stats.err);
  CHECK(json::parse(fixture::read_bytes(work / "stats.json")).at("manifest").at("total") == 21);

  const Result pre = run_cli({"preprocess", "--config", cfg});
  REQUIRE_MESSAGE(pre.code == 0, pre.err);
  const std::string index = fixture::read_bytes(work / "segments" / "index.csv");
  CHECK(index.rfind("uuid,segment_index,start_sample,end_sample\n", 0) == 0);
  const auto rows = static_cast<std::size_t>(std::count(index.begin(), index.end(), '\n')) - 1;
  CHECK(rows >= 20);
  CHECK(fs::exists(work / "segments" / "clip100_0.wav"));
  CHECK(read_wav(work / "segments" / "clip100_0.wav").sample_rate_hz == 12000);
  CHECK_FALSE(fs::exists(work / "segments" / "lowq_0.wav"));
  const std::string wav = fixture::read_bytes(work / "segments" / "clip107_1.wav");

  REQUIRE(run_cli({"preprocess", "--config", cfg}).code == 0);
  CHECK(fixture::read_bytes(work / "segments" / "index.csv") == index);
  CHECK(fixture::read_bytes(work / "segments" / "clip107_1.wav") == wav);

  const Result feat = run_cli({"featurize", "--config", cfg});
  REQUIRE_MESSAGE(feat.code == 0, feat.err);
  const LabeledSet train = from_checkpoint(load_checkpoint(work / "features" / "train.acgn"));
  const LabeledSet val = from_checkpoint(load_checkpoint(work / "features" / "validation.acgn"));
  const LabeledSet test = from_checkpoint(load_checkpoint(work / "features" / "test.acgn"));
  CHECK(train.size() + val.size() + test.size() == rows);
  CHECK(train.class_counts().size() == 2);
  const json summary = json::parse(fixture::read_bytes(work / "features" / "summary.json"));
  CHECK(summary.at("test_hash") == dataset_hash(test));
  const std::string train_bytes = fixture::read_bytes(work / "features" / "train.acgn");
  REQUIRE(run_cli({"featurize", "--config", cfg}).code == 0);
  CHECK(fixture::read_bytes(work / "features" / "train.acgn") == train_bytes);

  const Result gan = run_cli({"train-gan", "--config", cfg});
  REQUIRE_MESSAGE(gan.code == 0, gan.err);
  CHECK(fs::exists(work / "gan" / "checkpoints"));
  const std::string history = fixture::read_bytes(work / "gan" / "history.csv");
  CHECK(std::count(history.begin(), history.end(), '\n') == 3);
  const std::string gen_bytes = fixture::read_bytes(work / "gan" / "generator.acgn");
  REQUIRE(run_cli({"train-gan", "--config", cfg}).code == 0);
  CHECK(fixture::read_bytes(work / "gan" / "generator.acgn") == gen_bytes);

  const Result synth = run_cli({"synth", "--config", cfg});
  REQUIRE_MESSAGE(synth.code == 0, synth.err);
  const LabeledSet synthetic = from_checkpoint(load_checkpoint(work / "synth" / "synthetic.acgn"));
  CHECK(synthetic.size() == 6);
  CHECK(synthetic.count(Provenance::synthetic) == 6);
  CHECK(fs::exists(work / "synth" / "audio" / "synthetic-0-0.wav"));
  REQUIRE(run_cli({"synth", "--config", cfg, "--class", "COVID-19", "--count", "2"}).code == 0);
  const LabeledSet covid = from_checkpoint(load_checkpoint(work / "synth" / "synthetic_covid-19.acgn"));
  CHECK(covid.labels == std::vector<int>{1, 1});
  CHECK(run_cli({"synth", "--config", cfg, "--class", "flu"}).code == cli::kConfigFailure);

  const Result clf = run_cli({"train-clf", "--config", cfg});
  REQUIRE_MESSAGE(clf.code == 0, clf.err);
  const json metrics = json::parse(fixture::read_bytes(work / "classifier" / "metrics.json"));
  CHECK(metrics.at("test_hash") == dataset_hash(test));
  const Result aug =
      run_cli({"train-clf", "--config", cfg, "--augment", (work / "synth" / "synthetic.acgn").string()});
  REQUIRE_MESSAGE(aug.code == 0, aug.err);
  const json aug_metrics = json::parse(fixture::read_bytes(work / "classifier_augmented" / "metrics.json"));
  CHECK(aug_metrics.at("test_hash") == metrics.at("test_hash"));
  CHECK(aug_metrics.at("train").at("synthetic") == 6);
  CHECK(aug_metrics.at("train").at("records") == train.size() + 6);

  const Result ev = run_cli({"eval", "--config", cfg});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const json doc = json::parse(fixture::read_bytes(work / "eval" / "classifier_classifier.json"));
  CHECK(ev.out.find("accuracy " + doc.at("metrics").at("accuracy").dump() + "\n") != std::string::npos);
  CHECK(doc.at("metrics").at("accuracy") == metrics.at("final").at("test").at("accuracy"));
  CHECK(doc.at("metrics").at("count") == test.size());

  const Result pl = run_cli({"plot", "--config", cfg});
  REQUIRE_MESSAGE(pl.code == 0, pl.err);
  for (const char* f : {"gan_history_losses.svg", "classifier_history_accuracy.svg", "real_vs_synthetic.png"})
    CHECK_MESSAGE(fs::exists(work / "plots" / f), f);
  const std::string svg = fixture::read_bytes(work / "plots" / "gan_history_losses.svg");
  REQUIRE(run_cli({"plot", "--config", cfg}).code == 0);
  CHECK(fixture::read_bytes(work / "plots" / "gan_history_losses.svg") == svg);

  const Result grid = run_cli({"plot", "--config", cfg, "--input", (work / "features" / "train.acgn").string(),
                               "--output", (dir / "grid").string()});
  REQUIRE_MESSAGE(grid.code == 0, grid.err);
  CHECK(fs::exists(dir / "grid" / "features_train_grid.png"));

  // A tampered test set is refused before evaluation.
  LabeledSet tampered = test;
  tampered.labels[0] = 1 - tampered.labels[0];
  save_checkpoint(to_checkpoint(tampered), work / "features" / "test.acgn");
  CHECK(run_cli({"eval", "--config", cfg}).code == cli::kDataFailure);
}
