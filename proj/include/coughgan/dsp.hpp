#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "coughgan/audio_io.hpp"

namespace coughgan::dsp {

/// Divides by the peak magnitude. All-zero clips are returned unchanged.
AudioClip normalize_peak(const AudioClip& clip);

/// One second-order section, b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

struct SosFilter {
  std::vector<Biquad> sections;

  /// Complex response at `freq_hz`.
  std::complex<double> response(double freq_hz, int sample_rate_hz) const;
  double magnitude(double freq_hz, int sample_rate_hz) const {
    return std::abs(response(freq_hz, sample_rate_hz));
  }
  bool is_stable() const;
};

/// Bilinear-transform Butterworth low-pass with frequency pre-warping, so the
/// cutoff sits exactly at -3.01 dB. `order` must be even.
SosFilter design_butterworth_lowpass(int order, double cutoff_hz, int sample_rate_hz);

/// Causal cascade of transposed direct-form II sections, zero initial state.
AudioClip apply_filter(const AudioClip& clip, const SosFilter& filter);

/// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
/// Output length is round(n * target / source).
AudioClip resample(const AudioClip& clip, int target_rate_hz);

double rms(std::span<const double> samples);

/// Half-open sample interval [start_sample, end_sample).
struct SegmentBounds {
  std::size_t start_sample = 0;
  std::size_t end_sample = 0;

  std::size_t length() const noexcept { return end_sample - start_sample; }
  friend bool operator==(const SegmentBounds&, const SegmentBounds&) = default;
};

struct SegmentationParams {
  double high_rms_factor = 2.0;
  double low_rms_factor = 0.1;
  /// Total padding; half is added on each side of a raw segment.
  double pad_s = 0.1;
  /// How long |x| must stay below the low threshold before a segment closes.
  double hangover_s = 0.0;
  double min_segment_s = 0.1;
};

void validate(const SegmentationParams& p);

/// Two-threshold hysteresis comparator on |x| with thresholds relative to
/// the clip RMS. Raw segments are padded, clamped to the clip, extended to
/// the minimum length where clamping shortened them, and merged where they
/// overlap. Returned in ascending order.
std::vector<SegmentBounds> segment_coughs(const AudioClip& clip, const SegmentationParams& params);

AudioClip extract_segment(const AudioClip& clip, const SegmentBounds& bounds);

/// Full front end: peak-normalize, Butterworth low-pass (skipped when the
/// cutoff is not below the source Nyquist frequency), resample, and
/// renormalize if filter ringing pushed the peak past 1.
struct PreprocessParams {
  int target_rate_hz = 12000;
  int filter_order = 4;
  double cutoff_hz = 6000.0;
};

AudioClip preprocess(const AudioClip& clip, const PreprocessParams& params);

}  // namespace coughgan::dsp
