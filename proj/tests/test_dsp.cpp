#include "doctest.h"

#include <cmath>
#include <numbers>

#include "coughgan/dsp.hpp"
#include "coughgan/error.hpp"
#include "coughgan/fft.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace coughgan;
using dsp::SegmentBounds;

namespace {

std::vector<std::array<double, 5>> coefficients(const dsp::SosFilter& f) {
  std::vector<std::array<double, 5>> out;
  for (const auto& s : f.sections) out.push_back({s.b0, s.b1, s.b2, s.a1, s.a2});
  return out;
}

std::vector<SegmentBounds> as_bounds(const std::vector<oracle::Interval>& v) {
  std::vector<SegmentBounds> out;
  for (const auto& iv : v) out.push_back({iv.start, iv.end});
  return out;
}

}  // namespace

TEST_CASE("normalize_peak") {
  const AudioClip c = dsp::normalize_peak(AudioClip{{0.2, -0.5}, 12000});
  CHECK(c.samples[0] == doctest::Approx(0.4));
  CHECK(c.samples[1] == -1.0);
  const AudioClip z{{0.0, 0.0, 0.0}, 12000};
  CHECK(dsp::normalize_peak(z).samples == z.samples);
  CHECK_THROWS_AS(dsp::normalize_peak(AudioClip{{}, 12000}), DomainError);

  Rng rng(9);
  AudioClip r;
  r.sample_rate_hz = 8000;
  for (int i = 0; i < 1000; ++i) r.samples.push_back(rng.normal() * 0.3);
  double peak = 0.0;
  for (double v : dsp::normalize_peak(r).samples) peak = std::max(peak, std::abs(v));
  CHECK(std::abs(peak - 1.0) < 1e-12);
}

TEST_CASE("butterworth design matches its analytic response") {
  const auto f = dsp::design_butterworth_lowpass(4, 6000.0, 48000);
  const auto coeff = coefficients(f);
  CHECK(f.is_stable());
  CHECK(std::abs(oracle::biquad_cascade_magnitude(coeff, 0.0, 48000) - 1.0) < 1e-6);
  const double cut_db = 20.0 * std::log10(oracle::biquad_cascade_magnitude(coeff, 6000.0, 48000));
  CHECK(std::abs(cut_db - (-3.0103)) < 0.1);
  CHECK(oracle::biquad_cascade_magnitude(coeff, 12000.0, 48000) < oracle::biquad_cascade_magnitude(coeff, 6000.0, 48000));
  for (double hz = 10.0; hz < 24000.0; hz += 10.0)
    CHECK(std::abs(f.magnitude(hz, 48000) - oracle::biquad_cascade_magnitude(coeff, hz, 48000)) < 1e-12);

  CHECK_THROWS_AS(dsp::design_butterworth_lowpass(4, 30000.0, 48000), DomainError);
  CHECK_THROWS_AS(dsp::design_butterworth_lowpass(4, 0.0, 48000), DomainError);
}

TEST_CASE("apply_filter is linear and its impulse response matches the design") {
  const auto f = dsp::design_butterworth_lowpass(4, 6000.0, 48000);
  AudioClip impulse{std::vector<double>(4096, 0.0), 48000};
  impulse.samples[0] = 1.0;
  const AudioClip h = dsp::apply_filter(impulse, f);
  CHECK(h.size() == impulse.size());
  const auto spectrum = oracle::dft(h.samples, 2049);
  for (std::size_t k = 0; k < spectrum.size(); k += 16) {
    const double hz = 48000.0 * static_cast<double>(k) / 4096.0;
    CHECK(std::abs(std::abs(spectrum[k]) - f.magnitude(hz, 48000)) < 1e-6);
  }

  Rng rng(4);
  AudioClip x{{}, 48000}, y{{}, 48000}, sum{{}, 48000}, zero{std::vector<double>(500, 0.0), 48000};
  for (int i = 0; i < 500; ++i) {
    x.samples.push_back(rng.normal());
    y.samples.push_back(rng.normal());
    sum.samples.push_back(x.samples.back() + y.samples.back());
  }
  const auto fx = dsp::apply_filter(x, f), fy = dsp::apply_filter(y, f), fs = dsp::apply_filter(sum, f);
  AudioClip twice = x;
  for (double& v : twice.samples) v *= 2.0;
  const auto f2 = dsp::apply_filter(twice, f);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(std::abs(fs.samples[i] - fx.samples[i] - fy.samples[i]) < 1e-12);
    CHECK(f2.samples[i] == 2.0 * fx.samples[i]);
  }
  for (double v : dsp::apply_filter(zero, f).samples) CHECK(v == 0.0);

  dsp::SosFilter unstable;
  unstable.sections.push_back({1, 0, 0, 0, 1.5});
  CHECK_THROWS_AS(dsp::apply_filter(x, unstable), DomainError);
}

TEST_CASE("resample") {
  AudioClip tone{{}, 48000};
  for (int i = 0; i < 48000; ++i) tone.samples.push_back(std::sin(2.0 * std::numbers::pi * 1000.0 * i / 48000.0));
  const AudioClip down = dsp::resample(tone, 12000);
  CHECK(down.size() == 12000);
  CHECK(down.sample_rate_hz == 12000);
  // Least-squares fit of a 1 kHz sinusoid to interior samples.
  double ss = 0, sc = 0, cc = 0, ys = 0, yc = 0;
  for (std::size_t i = 1000; i < 11000; ++i) {
    const double w = 2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 12000.0;
    const double s = std::sin(w), c = std::cos(w), y = down.samples[i];
    ss += s * s, sc += s * c, cc += c * c, ys += y * s, yc += y * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (ys * cc - yc * sc) / det, b = (yc * ss - ys * sc) / det;
  CHECK(std::abs(std::hypot(a, b) - 1.0) < 0.01);

  CHECK(dsp::resample(tone, 48000).samples == tone.samples);
  CHECK(dsp::resample(AudioClip{std::vector<double>(1001, 0.1), 44100}, 12000).size() == 272);
}

TEST_CASE("rms") {
  CHECK(dsp::rms(std::vector<double>(10, 0.5)) == doctest::Approx(0.5));
  CHECK(dsp::rms(std::vector<double>{1, -1, 1, -1}) == 1.0);
  const auto burst = fixture::bursts(12000, {{1000, 2000}});
  CHECK(dsp::rms(burst.samples) == doctest::Approx(std::sqrt(1000.0 / 12000.0)).epsilon(1e-12));
  CHECK_THROWS_AS(dsp::rms(std::vector<double>{}), DomainError);
}

TEST_CASE("segmentation of the burst fixtures") {
  const dsp::SegmentationParams p;
  CHECK(dsp::segment_coughs(AudioClip{std::vector<double>(12000, 0.0), 12000}, p).empty());
  CHECK(dsp::segment_coughs(fixture::bursts(12000, {{1000, 2000}}), p) == std::vector<SegmentBounds>{{400, 2600}});
  CHECK(dsp::segment_coughs(fixture::bursts(12000, {{1000, 2000}, {2500, 3500}}), p) ==
        std::vector<SegmentBounds>{{400, 4100}});
}

TEST_CASE("segmentation agrees with the per-sample reference") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    dsp::SegmentationParams p;
    p.hangover_s = trial % 2 ? 0.01 * static_cast<double>(trial % 5) : 0.0;
    const AudioClip clip{fixture::random_piecewise(rng, 3000 + rng.below(20000)), 12000};
    const auto expected = oracle::segments(clip.samples, 12000, p.high_rms_factor, p.low_rms_factor, p.pad_s,
                                           p.hangover_s, p.min_segment_s);
    const auto got = dsp::segment_coughs(clip, p);
    CHECK(got == as_bounds(expected));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].length() >= 1200);
      CHECK(got[i].end_sample <= clip.size());
      if (i) CHECK(got[i - 1].end_sample <= got[i].start_sample);
    }
    AudioClip scaled = clip;
    for (double& v : scaled.samples) v *= 3.0;
    CHECK(dsp::segment_coughs(scaled, p) == got);
  }
}

TEST_CASE("hangover bridges a short silent gap") {
  const AudioClip clip = fixture::bursts(24000, {{2000, 4000}, {4300, 6000}});
  dsp::SegmentationParams p;
  p.pad_s = 0.0;
  CHECK(dsp::segment_coughs(clip, p).size() == 2);
  p.hangover_s = 0.05;
  const auto merged = dsp::segment_coughs(clip, p);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].start_sample == 2000);
  CHECK(merged[0].end_sample == 6000 + 600);
}

TEST_CASE("segment parameter validation") {
  dsp::SegmentationParams p;
  p.low_rms_factor = 3.0;
  CHECK_THROWS_AS(dsp::validate(p), ConfigError);
  p = {};
  p.pad_s = -1.0;
  CHECK_THROWS_AS(dsp::validate(p), ConfigError);
}

TEST_CASE("extract_segment") {
  const AudioClip clip = fixture::bursts(12000, {{1000, 2000}});
  CHECK(dsp::extract_segment(clip, {0, clip.size()}).samples == clip.samples);
  CHECK(dsp::extract_segment(clip, {400, 2600}).size() == 2200);
  CHECK_THROWS_AS(dsp::extract_segment(clip, {5, 5}), DomainError);
  CHECK_THROWS_AS(dsp::extract_segment(clip, {0, 12001}), DomainError);
}

TEST_CASE("preprocess produces a 12 kHz clip bounded by 1") {
  AudioClip x{{}, 44100};
  Rng rng(6);
  for (int i = 0; i < 44100; ++i) x.samples.push_back(0.2 * rng.normal());
  const AudioClip y = dsp::preprocess(x, {});
  CHECK(y.sample_rate_hz == 12000);
  CHECK(y.size() == 12000);
  double peak = 0.0;
  for (double v : y.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 1.0);
}

TEST_CASE("fft satisfies Parseval and matches the direct DFT") {
  const fft::Plan plan(2048);
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(2048);
    for (double& v : x) v = rng.normal();
    const auto half = plan.rfft(x);
    const auto direct = oracle::dft(x, 1025);
    double err = 0.0, time = 0.0, freq = 0.0;
    for (std::size_t k = 0; k < 1025; ++k) err = std::max(err, std::abs(half[k] - direct[k]));
    CHECK(err < 1e-9);
    for (double v : x) time += v * v;
    for (std::size_t k = 0; k < 1025; ++k) freq += (k == 0 || k == 1024 ? 1.0 : 2.0) * std::norm(half[k]);
    CHECK(std::abs(time - freq / 2048.0) / time < 1e-9);
    const auto back = plan.irfft(half);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
  }
}
