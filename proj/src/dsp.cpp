#include "coughgan/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "coughgan/error.hpp"

namespace coughgan::dsp {

AudioClip normalize_peak(const AudioClip& clip) {
  if (clip.samples.empty()) throw DomainError("normalize_peak: empty clip");
  double peak = 0.0;
  for (double s : clip.samples) peak = std::max(peak, std::abs(s));
  if (peak == 0.0) return clip;
  AudioClip out = clip;
  for (double& s : out.samples) s /= peak;
  return out;
}

// ---------------------------------------------------------------------------
// Butterworth

std::complex<double> SosFilter::response(double freq_hz, int sample_rate_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

bool SosFilter::is_stable() const {
  // Stability triangle for 1 + a1 z^-1 + a2 z^-2.
  return std::all_of(sections.begin(), sections.end(), [](const Biquad& s) {
    return std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2;
  });
}

SosFilter design_butterworth_lowpass(int order, double cutoff_hz, int sample_rate_hz) {
  if (sample_rate_hz <= 0) throw DomainError("sample rate must be positive");
  if (order < 2 || order % 2 != 0) throw DomainError("Butterworth order must be even and >= 2");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate_hz / 2.0))
    throw DomainError("cutoff must lie in (0, fs/2), got " + std::to_string(cutoff_hz) + " Hz");

  // Pre-warped analog cutoff in units where s = (1 - z^-1) / (1 + z^-1).
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  SosFilter f;
  for (int i = 0; i < order / 2; ++i) {
    // Pole pair of the normalized prototype: s^2 + a s + 1, a = 2 sin(theta).
    const double theta = std::numbers::pi * (2.0 * i + 1.0) / (2.0 * order);
    const double a = 2.0 * std::sin(theta);
    const double a0 = 1.0 + a * k + k * k;
    Biquad s;
    s.b0 = k * k / a0;
    s.b1 = 2.0 * k * k / a0;
    s.b2 = k * k / a0;
    s.a1 = (2.0 * k * k - 2.0) / a0;
    s.a2 = (1.0 - a * k + k * k) / a0;
    f.sections.push_back(s);
  }
  return f;
}

AudioClip apply_filter(const AudioClip& clip, const SosFilter& filter) {
  if (!filter.is_stable()) throw DomainError("apply_filter: unstable filter coefficients");
  AudioClip out = clip;
  for (const auto& s : filter.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double& x : out.samples) {
      const double y = s.b0 * x + z1;
      z1 = s.b1 * x - s.a1 * y + z2;
      z2 = s.b2 * x - s.a2 * y;
      x = y;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

constexpr double kZeroCrossings = 32.0;
constexpr double kRolloff = 0.95;
constexpr double kKaiserBeta = 8.6;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  if (std::abs(x) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate_hz) {
  if (target_rate_hz <= 0) throw DomainError("target sample rate must be positive");
  validate_clip(clip);
  if (target_rate_hz == clip.sample_rate_hz) return clip;

  const long g = std::gcd(static_cast<long>(clip.sample_rate_hz), static_cast<long>(target_rate_hz));
  const long up = target_rate_hz / g;
  const long down = clip.sample_rate_hz / g;
  const double scale = std::min(1.0, static_cast<double>(up) / static_cast<double>(down)) * kRolloff;
  const double half_width = kZeroCrossings / scale;  // in input samples
  const long taps_each_side = static_cast<long>(std::ceil(half_width)) + 1;
  const long taps = 2 * taps_each_side + 1;

  // phase p covers output instants q + p/up; tap j multiplies x[q - taps_each_side + j].
  std::vector<std::vector<double>> table(static_cast<std::size_t>(up), std::vector<double>(static_cast<std::size_t>(taps)));
  for (long p = 0; p < up; ++p) {
    auto& row = table[static_cast<std::size_t>(p)];
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    double sum = 0.0;
    for (long j = 0; j < taps; ++j) {
      const double d = frac - static_cast<double>(j - taps_each_side);
      const double v = scale * sinc(scale * d) * kaiser(d / half_width, kKaiserBeta);
      row[static_cast<std::size_t>(j)] = v;
      sum += v;
    }
    for (double& v : row) v /= sum;
  }

  const long n_in = static_cast<long>(clip.samples.size());
  const long n_out = std::llround(static_cast<double>(n_in) * static_cast<double>(up) / static_cast<double>(down));
  AudioClip out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (long n = 0; n < n_out; ++n) {
    const long pos = n * down;
    const long q = pos / up;
    const auto& row = table[static_cast<std::size_t>(pos % up)];
    const long first = q - taps_each_side;
    const long j0 = std::max(0L, -first);
    const long j1 = std::min(taps, n_in - first);
    double acc = 0.0;
    for (long j = j0; j < j1; ++j) acc += row[static_cast<std::size_t>(j)] * clip.samples[static_cast<std::size_t>(first + j)];
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

double rms(std::span<const double> samples) {
  if (samples.empty()) throw DomainError("rms of an empty sequence");
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

void validate(const SegmentationParams& p) {
  if (!(p.low_rms_factor > 0.0) || !(p.high_rms_factor > p.low_rms_factor))
    throw ConfigError("segmentation requires high_rms_factor > low_rms_factor > 0");
  if (!(p.pad_s >= 0.0) || !(p.hangover_s >= 0.0) || !(p.min_segment_s >= 0.0))
    throw ConfigError("segmentation pad_s, hangover_s and min_segment_s must be non-negative");
}

std::vector<SegmentBounds> segment_coughs(const AudioClip& clip, const SegmentationParams& params) {
  validate(params);
  std::vector<SegmentBounds> out;
  const auto& x = clip.samples;
  const std::size_t n = x.size();
  if (n == 0) return out;
  const double level = rms(x);
  if (level == 0.0) return out;
  const double high = params.high_rms_factor * level;
  const double low = params.low_rms_factor * level;
  const auto rate = static_cast<double>(clip.sample_rate_hz);
  const auto hangover = static_cast<std::size_t>(std::llround(params.hangover_s * rate));
  const auto pad = static_cast<std::size_t>(std::llround(params.pad_s * rate / 2.0));
  const auto min_len = static_cast<std::size_t>(std::ceil(params.min_segment_s * rate - 1e-9));

  auto loud = [&](double v) { return std::abs(v) >= high; };
  auto quiet = [&](double v) { return std::abs(v) < low; };

  std::vector<SegmentBounds> raw;
  auto it = x.begin();
  while (true) {
    it = std::find_if(it, x.end(), loud);
    if (it == x.end()) break;
    const std::size_t start = static_cast<std::size_t>(it - x.begin());
    std::size_t end = n;
    auto scan = it + 1;
    while (true) {
      scan = std::find_if(scan, x.end(), quiet);
      if (scan == x.end()) break;
      const std::size_t j = static_cast<std::size_t>(scan - x.begin());
      if (j + hangover >= n) break;  // clip ends inside the quiet run
      const auto run_end = scan + static_cast<std::ptrdiff_t>(hangover) + 1;
      const auto noisy = std::find_if_not(scan, run_end, quiet);
      if (noisy == run_end) {
        end = j + hangover;
        break;
      }
      scan = noisy;
    }
    raw.push_back({start, end});
    if (end >= n) break;
    it = x.begin() + static_cast<std::ptrdiff_t>(end);
  }

  for (const auto& r : raw) {
    SegmentBounds b{r.start_sample >= pad ? r.start_sample - pad : 0, std::min(n, r.end_sample + pad)};
    if (b.length() < min_len) {
      if (n < min_len) continue;
      // Clamping at a clip edge shortened the segment: grow the other side.
      b.end_sample += std::min(n - b.end_sample, min_len - b.length());
      b.start_sample -= std::min(b.start_sample, min_len - b.length());
    }
    if (!out.empty() && b.start_sample < out.back().end_sample) {
      out.back().end_sample = std::max(out.back().end_sample, b.end_sample);
    } else {
      out.push_back(b);
    }
  }
  return out;
}

AudioClip extract_segment(const AudioClip& clip, const SegmentBounds& bounds) {
  if (bounds.start_sample >= bounds.end_sample || bounds.end_sample > clip.samples.size())
    throw DomainError("segment [" + std::to_string(bounds.start_sample) + ", " +
                      std::to_string(bounds.end_sample) + ") invalid for clip of " +
                      std::to_string(clip.samples.size()) + " samples");
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(bounds.start_sample),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(bounds.end_sample));
  return out;
}

AudioClip preprocess(const AudioClip& clip, const PreprocessParams& params) {
  AudioClip x = normalize_peak(clip);
  if (params.cutoff_hz < x.sample_rate_hz / 2.0)
    x = apply_filter(x, design_butterworth_lowpass(params.filter_order, params.cutoff_hz, x.sample_rate_hz));
  x = resample(x, params.target_rate_hz);
  double peak = 0.0;
  for (double s : x.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0) x = normalize_peak(x);
  return x;
}

}  // namespace coughgan::dsp
