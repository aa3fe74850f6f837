#pragma once

// A generated clip corpus and an in-process CLI runner for pipeline runs.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "coughgan/cli.hpp"
#include "coughgan/rng.hpp"
#include "fixtures.hpp"

namespace pipeline {

using coughgan::Rng;
using nlohmann::json;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

inline Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "coughgan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = coughgan::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

inline json tiny_pipeline(const fs::path& root) {
  return {
      {"version", 1},
      {"seed", 7},
      {"paths", {{"manifest", "data/manifest.csv"}, {"work_dir", (root / "work").string()}}},
      {"gan",
       {{"latent_dim", 8},
        {"embedding_dim", 3},
        {"gen_noise_channels", 3},
        {"gen_channels", {4, 2}},
        {"disc_filters", {2, 3, 3, 2, 2}},
        {"epochs", 2},
        {"batch_size", 4},
        {"checkpoint_every", 1}}},
      {"classifier", {{"filters", {2, 3, 3, 2, 2}}, {"epochs", 2}, {"batch_size", 8}}},
      {"augmentation", {{"count_per_class", 3}, {"audio_examples", 1}}},
  };
}

/// Ten clips per class at 16 kHz, each with two noise bursts, and a manifest.
inline void write_dataset(const fs::path& dir) {
  fs::create_directories(dir);
  std::string manifest = "uuid,cough_detected,status,status_SSL\n";
  Rng rng(99);
  for (int i = 0; i < 20; ++i) {
    const std::string uuid = "clip" + std::to_string(100 + i);
    const bool covid = i % 2;
    std::vector<std::int16_t> codes(16000, 0);
    for (auto [a, b] : {std::pair{2000, 5000}, std::pair{9000, 11000 + 200 * (i % 5)}})
      for (int k = a; k < b; ++k) codes[k] = static_cast<std::int16_t>(12000.0 * (2.0 * rng.uniform() - 1.0));
    fixture::write_pcm16(dir / (uuid + ".wav"), codes, 1, 16000);
    manifest += uuid + ",0.9," + (covid ? "COVID-19" : "healthy") + "," + (covid ? "COVID-19" : "healthy") + "\n";
  }
  // Below the quality threshold: filtered before any audio is read.
  manifest += "lowq,0.2,healthy,healthy\n";
  fixture::write_text(dir / "manifest.csv", manifest);
}

inline std::string config_file(const fixture::TempDir& dir, const json& j) {
  const fs::path p = dir / "config.json";
  fixture::write_text(p, j.dump(2));
  return p.string();
}

}  // namespace pipeline
