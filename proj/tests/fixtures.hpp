#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "coughgan/audio_io.hpp"
#include "coughgan/dataset.hpp"
#include "coughgan/features.hpp"
#include "coughgan/rng.hpp"

namespace fixture {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("coughgan-" + tag + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// RIFF/WAVE with 16-bit PCM frames given as interleaved codes.
inline void write_pcm16(const std::filesystem::path& path, const std::vector<std::int16_t>& codes, int channels,
                        int rate) {
  auto u32 = [](std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto u16 = [](std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(codes.size() * 2);
  std::string s = "RIFF";
  u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  u32(s, 16);
  u16(s, 1);
  u16(s, static_cast<std::uint16_t>(channels));
  u32(s, static_cast<std::uint32_t>(rate));
  u32(s, static_cast<std::uint32_t>(rate * channels * 2));
  u16(s, static_cast<std::uint16_t>(channels * 2));
  u16(s, 16);
  s += "data";
  u32(s, data_bytes);
  for (std::int16_t c : codes) u16(s, static_cast<std::uint16_t>(c));
  write_text(path, s);
}

/// 12 kHz clip of `n` zeros with unit bursts on the given half-open ranges.
inline coughgan::AudioClip bursts(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
  coughgan::AudioClip c;
  c.sample_rate_hz = 12000;
  c.samples.assign(n, 0.0);
  for (auto [a, b] : ranges)
    for (std::size_t i = a; i < b; ++i) c.samples[i] = (i % 2) ? 1.0 : -1.0;
  return c;
}

/// Piecewise signal of silence, low noise and loud bursts.
inline std::vector<double> random_piecewise(coughgan::Rng& rng, std::size_t n) {
  std::vector<double> x(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    const std::size_t len = 20 + rng.below(600);
    const double amp = std::array<double, 4>{0.0, 0.01, 0.3, 1.0}[rng.below(4)];
    for (std::size_t k = i; k < std::min(n, i + len); ++k) x[k] = amp * (2.0 * rng.uniform() - 1.0);
    i += len;
  }
  return x;
}

/// Two-class toy spectrograms: a Gaussian energy blob in the low (class 0)
/// or high (class 1) mel bands over a noisy floor.
inline coughgan::LabeledSet toy_spectrograms(std::size_t per_class, std::uint64_t seed) {
  using namespace coughgan;
  LabeledSet set;
  set.n_classes = 2;
  Rng r(seed);
  std::vector<double> img(features::kSpectrogramSize);
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const double mc = (c == 0 ? 20.0 : 100.0) + 6.0 * r.uniform();
      const double tc = 6.0 + 12.0 * r.uniform();
      for (std::size_t m = 0; m < features::kMels; ++m)
        for (std::size_t t = 0; t < features::kFrames; ++t) {
          const double dm = static_cast<double>(m) - mc, dt = static_cast<double>(t) - tc;
          const double v = -0.8 + 0.05 * r.normal() + 1.6 * std::exp(-(dm * dm / 128.0 + dt * dt / 18.0));
          img[m * features::kFrames + t] = std::clamp(v, -1.0, 1.0);
        }
      set.add(img, c, Provenance::real, "toy-" + std::to_string(c) + "-" + std::to_string(i));
    }
  return set;
}

}  // namespace fixture
