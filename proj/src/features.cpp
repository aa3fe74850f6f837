#include "coughgan/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "coughgan/error.hpp"
#include "coughgan/fft.hpp"

namespace coughgan::features {

namespace {

constexpr double kAmin = 1e-10;

const fft::Plan& default_plan() {
  static const fft::Plan plan(kFftSize);
  return plan;
}

const fft::Plan& plan_for(std::size_t n) {
  if (n == kFftSize) return default_plan();
  thread_local std::vector<fft::Plan> plans;
  for (const auto& p : plans)
    if (p.size() == n) return p;
  plans.emplace_back(n);
  return plans.back();
}

std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - m);
}

/// Frames of `padded` starting every hop; no further padding.
ComplexMatrix frame_transform(std::span<const double> padded, std::size_t n_fft, std::size_t hop,
                              std::size_t frames, std::span<const double> window) {
  const auto& plan = plan_for(n_fft);
  ComplexMatrix out(n_fft / 2 + 1, frames);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = padded[t * hop + i] * window[i];
    const auto spectrum = plan.rfft(frame);
    for (std::size_t k = 0; k < out.rows; ++k) out(k, t) = spectrum[k];
  }
  return out;
}

}  // namespace

std::vector<double> to_canonical(const AudioClip& segment) {
  if (segment.samples.empty()) throw DomainError("to_canonical: empty segment");
  if (segment.sample_rate_hz != kSampleRate)
    throw DomainError("to_canonical: segment must be at 12000 Hz, got " + std::to_string(segment.sample_rate_hz));
  const auto& x = segment.samples;
  std::vector<double> out(kCanonicalLength, 0.0);
  if (x.size() >= kCanonicalLength) {
    const std::size_t offset = (x.size() - kCanonicalLength) / 2;
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(offset), kCanonicalLength, out.begin());
  } else {
    const std::size_t left = (kCanonicalLength - x.size()) / 2;
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(left));
  }
  return out;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

ComplexMatrix stft(std::span<const double> samples, std::size_t n_fft, std::size_t hop) {
  if (samples.empty()) throw DomainError("stft: empty input");
  if (hop == 0) throw DomainError("stft: hop must be positive");
  const long n = static_cast<long>(samples.size());
  const long pad = static_cast<long>(n_fft / 2);
  std::vector<double> padded(samples.size() + n_fft);
  for (long i = 0; i < static_cast<long>(padded.size()); ++i) padded[static_cast<std::size_t>(i)] = samples[reflect_index(i - pad, n)];
  const std::size_t frames = 1 + samples.size() / hop;
  return frame_transform(padded, n_fft, hop, frames, hann_window(n_fft));
}

double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

Matrix mel_filterbank(int sample_rate_hz, std::size_t n_fft, std::size_t n_mels, double fmin_hz, double fmax_hz) {
  if (!(fmin_hz >= 0.0) || !(fmin_hz < fmax_hz) || fmax_hz > sample_rate_hz / 2.0)
    throw DomainError("mel_filterbank requires 0 <= fmin < fmax <= fs/2");
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> fft_freqs(bins);
  for (std::size_t k = 0; k < bins; ++k)
    fft_freqs[k] = static_cast<double>(k) * sample_rate_hz / static_cast<double>(n_fft);

  // n_mels + 2 band edges equally spaced in mel.
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  Matrix bank(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < bins; ++k) {
      const double rising = (fft_freqs[k] - lo) / (center - lo);
      const double falling = (hi - fft_freqs[k]) / (hi - center);
      bank(m, k) = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return bank;
}

const Matrix& default_mel_filterbank() {
  static const Matrix bank = mel_filterbank();
  return bank;
}

MelSpectrogram mel_spectrogram_db(const AudioClip& segment, double top_db) {
  const auto canonical = to_canonical(segment);
  if (std::all_of(canonical.begin(), canonical.end(), [](double v) { return v == 0.0; }))
    throw DomainError("mel_spectrogram_db: all-zero segment has no dB reference");
  const auto spectrum = stft(canonical);
  const auto& bank = default_mel_filterbank();

  MelSpectrogram spec;
  spec.top_db = top_db;
  Matrix& mel = spec.values;
  std::vector<double> power(spectrum.rows);
  for (std::size_t t = 0; t < kFrames; ++t) {
    for (std::size_t k = 0; k < spectrum.rows; ++k) power[k] = std::norm(spectrum(k, t));
    for (std::size_t m = 0; m < kMels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < spectrum.rows; ++k) acc += bank(m, k) * power[k];
      mel(m, t) = acc;
    }
  }
  for (double& v : mel.data) v = 10.0 * std::log10(std::max(kAmin, v));
  const double ref_db = *std::max_element(mel.data.begin(), mel.data.end());
  for (double& v : mel.data) v = std::max(v - ref_db, -top_db);
  return spec;
}

UnitSpectrogram scale_to_unit(const MelSpectrogram& spec) {
  UnitSpectrogram unit;
  for (std::size_t i = 0; i < kSpectrogramSize; ++i) {
    const double v = spec.values.data[i];
    if (!(v >= -kTopDb && v <= 0.0)) throw DomainError("scale_to_unit: value " + std::to_string(v) + " dB outside [-80, 0]");
    unit.values[i] = v / (kTopDb / 2.0) + 1.0;
  }
  return unit;
}

MelSpectrogram unscale(const UnitSpectrogram& unit) {
  if (unit.values.size() != kSpectrogramSize) throw ShapeError("unscale: expected 128x24 values");
  MelSpectrogram spec;
  for (std::size_t i = 0; i < kSpectrogramSize; ++i) {
    const double v = unit.values[i];
    if (!(v >= -1.0 && v <= 1.0)) throw DomainError("unscale: value outside [-1, 1]");
    spec.values.data[i] = (v - 1.0) * (kTopDb / 2.0);
  }
  return spec;
}

Matrix mel_to_linear_power(const Matrix& mel_power, const Matrix& bank, int iterations) {
  if (mel_power.rows != bank.rows) throw ShapeError("mel_to_linear_power: band count mismatch");
  const std::size_t mels = bank.rows, bins = bank.cols, frames = mel_power.cols;

  // Non-zero support of each triangle.
  std::vector<std::size_t> lo(mels), hi(mels);
  for (std::size_t m = 0; m < mels; ++m) {
    lo[m] = bins;
    hi[m] = 0;
    for (std::size_t k = 0; k < bins; ++k)
      if (bank(m, k) > 0.0) {
        lo[m] = std::min(lo[m], k);
        hi[m] = k + 1;
      }
    if (lo[m] > hi[m]) lo[m] = hi[m] = 0;
  }
  auto project = [&](const std::vector<double>& p, std::vector<double>& out) {
    for (std::size_t m = 0; m < mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = lo[m]; k < hi[m]; ++k) acc += bank(m, k) * p[k];
      out[m] = acc;
    }
  };
  auto back_project = [&](const std::vector<double>& r, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t m = 0; m < mels; ++m)
      for (std::size_t k = lo[m]; k < hi[m]; ++k) out[k] += bank(m, k) * r[m];
  };

  // Lipschitz constant of the gradient: largest eigenvalue of M^T M by power iteration.
  std::vector<double> v(bins, 1.0), mv(mels), w(bins);
  double lipschitz = 1.0;
  for (int i = 0; i < 100; ++i) {
    project(v, mv);
    back_project(mv, w);
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lipschitz = norm;
    for (std::size_t k = 0; k < bins; ++k) v[k] = w[k] / norm;
  }
  const double step = 1.0 / (lipschitz * 1.01);

  // Accelerated projected gradient (FISTA) per frame.
  Matrix out(bins, frames);
  std::vector<double> target(mels), p(bins), p_prev(bins), y(bins), resid(mels), grad(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < mels; ++m) target[m] = mel_power(m, t);
    back_project(target, p);
    for (double& x : p) x = std::max(0.0, x);
    y = p;
    double momentum = 1.0;
    for (int it = 0; it < iterations; ++it) {
      project(y, resid);
      for (std::size_t m = 0; m < mels; ++m) resid[m] -= target[m];
      back_project(resid, grad);
      p_prev = p;
      for (std::size_t k = 0; k < bins; ++k) p[k] = std::max(0.0, y[k] - step * grad[k]);
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      const double beta = (momentum - 1.0) / next;
      for (std::size_t k = 0; k < bins; ++k) y[k] = p[k] + beta * (p[k] - p_prev[k]);
      momentum = next;
    }
    for (std::size_t k = 0; k < bins; ++k) out(k, t) = p[k];
  }
  return out;
}

GriffinLimTrace griffin_lim_trace(const MelSpectrogram& spec, int iterations) {
  if (iterations < 1) throw DomainError("griffin_lim: iterations must be >= 1");
  const auto& bank = default_mel_filterbank();
  Matrix mel_power(kMels, kFrames);
  for (std::size_t i = 0; i < kSpectrogramSize; ++i) mel_power.data[i] = std::pow(10.0, spec.values.data[i] / 10.0);
  const Matrix power = mel_to_linear_power(mel_power, bank);
  const std::size_t bins = power.rows;
  Matrix magnitude(bins, kFrames);
  for (std::size_t i = 0; i < power.data.size(); ++i) magnitude.data[i] = std::sqrt(power.data[i]);

  // Iterate on the padded signal so the least-squares inverse below is the
  // exact projection onto consistent spectrograms.
  const std::size_t padded_len = kCanonicalLength + kFftSize;
  const auto window = hann_window(kFftSize);
  std::vector<double> norm(padded_len, 0.0);
  for (std::size_t t = 0; t < kFrames; ++t)
    for (std::size_t i = 0; i < kFftSize; ++i) norm[t * kHop + i] += window[i] * window[i];

  // Half-spectrum norm weighted to equal the full-spectrum norm.
  auto bin_weight = [&](std::size_t k) { return (k == 0 || k == bins - 1) ? 1.0 : 2.0; };
  double target_norm = 0.0;
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t t = 0; t < kFrames; ++t) target_norm += bin_weight(k) * magnitude(k, t) * magnitude(k, t);
  target_norm = std::sqrt(target_norm);

  const auto& plan = default_plan();
  ComplexMatrix estimate(bins, kFrames);
  for (std::size_t i = 0; i < estimate.data.size(); ++i) estimate.data[i] = magnitude.data[i];

  GriffinLimTrace trace;
  std::vector<double> signal(padded_len);
  std::vector<std::complex<double>> half(bins);
  for (int it = 0; it < iterations; ++it) {
    std::fill(signal.begin(), signal.end(), 0.0);
    for (std::size_t t = 0; t < kFrames; ++t) {
      for (std::size_t k = 0; k < bins; ++k) half[k] = estimate(k, t);
      const auto frame = plan.irfft(half);
      for (std::size_t i = 0; i < kFftSize; ++i) signal[t * kHop + i] += window[i] * frame[i];
    }
    for (std::size_t i = 0; i < padded_len; ++i) signal[i] = norm[i] > 0.0 ? signal[i] / norm[i] : 0.0;

    const auto rebuilt = frame_transform(signal, kFftSize, kHop, kFrames, window);
    double err = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      for (std::size_t t = 0; t < kFrames; ++t) {
        const std::complex<double> y = rebuilt(k, t);
        const double mag = std::abs(y);
        const double d = mag - magnitude(k, t);
        err += bin_weight(k) * d * d;
        estimate(k, t) = mag > 0.0 ? y * (magnitude(k, t) / mag) : std::complex<double>(magnitude(k, t), 0.0);
      }
    }
    trace.residuals.push_back(target_norm > 0.0 ? std::sqrt(err) / target_norm : 0.0);
  }

  trace.audio.sample_rate_hz = kSampleRate;
  const std::size_t offset = kFftSize / 2;
  trace.audio.samples.assign(signal.begin() + static_cast<std::ptrdiff_t>(offset),
                             signal.begin() + static_cast<std::ptrdiff_t>(offset + kCanonicalLength));
  return trace;
}

AudioClip griffin_lim(const MelSpectrogram& spec, int iterations) {
  return griffin_lim_trace(spec, iterations).audio;
}

}  // namespace coughgan::features
