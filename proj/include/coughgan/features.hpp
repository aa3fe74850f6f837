#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "coughgan/audio_io.hpp"

namespace coughgan::features {

inline constexpr int kSampleRate = 12000;
inline constexpr std::size_t kFftSize = 2048;
inline constexpr std::size_t kHop = 512;
inline constexpr std::size_t kMels = 128;
inline constexpr std::size_t kFrames = 24;
/// 23 hops: a centered STFT of this many samples has exactly kFrames frames.
inline constexpr std::size_t kCanonicalLength = (kFrames - 1) * kHop;
inline constexpr double kTopDb = 80.0;
inline constexpr std::size_t kSpectrogramSize = kMels * kFrames;

/// Row-major rows x cols matrix.
template <typename T>
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

using Matrix = Grid<double>;
using ComplexMatrix = Grid<std::complex<double>>;

/// Center-crop or symmetrically zero-pad a 12 kHz segment to kCanonicalLength.
/// With an odd deficit the extra zero goes at the end.
std::vector<double> to_canonical(const AudioClip& segment);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Centered STFT: reflect padding of n_fft/2 on each side, periodic Hann
/// window, 1 + len/hop frames. Result is (n_fft/2 + 1) x frames.
ComplexMatrix stft(std::span<const double> samples, std::size_t n_fft = kFftSize, std::size_t hop = kHop);

/// Slaney mel scale (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular mel filters with Slaney area normalization; n_mels x (n_fft/2 + 1).
Matrix mel_filterbank(int sample_rate_hz = kSampleRate, std::size_t n_fft = kFftSize,
                      std::size_t n_mels = kMels, double fmin_hz = 0.0, double fmax_hz = 6000.0);

/// The default 12 kHz / 2048 / 128 bank, built once.
const Matrix& default_mel_filterbank();

/// 128 x 24 mel spectrogram in dB relative to its maximum, floored at -top_db.
struct MelSpectrogram {
  Matrix values{kMels, kFrames};
  int sample_rate_hz = kSampleRate;
  std::size_t n_fft = kFftSize;
  std::size_t hop = kHop;
  double fmin_hz = 0.0;
  double fmax_hz = kSampleRate / 2.0;
  double top_db = kTopDb;
};

/// Power spectrogram, mel projection, then 10 log10(S / max S) clamped at
/// -top_db. The segment is first brought to canonical length.
MelSpectrogram mel_spectrogram_db(const AudioClip& segment, double top_db = kTopDb);

/// Spectrogram affinely mapped from [-80, 0] dB to [-1, 1]; layout matches
/// MelSpectrogram::values (mel rows, frame columns).
struct UnitSpectrogram {
  std::vector<double> values = std::vector<double>(kSpectrogramSize, -1.0);
};

UnitSpectrogram scale_to_unit(const MelSpectrogram& spec);
MelSpectrogram unscale(const UnitSpectrogram& unit);

/// Non-negative least squares estimate of linear power (bins x frames) whose
/// mel projection matches `mel_power` (mels x frames).
Matrix mel_to_linear_power(const Matrix& mel_power, const Matrix& filterbank, int iterations = 300);

struct GriffinLimTrace {
  AudioClip audio;
  /// Spectral convergence || |STFT x_k| - S || / || S || after each iteration.
  std::vector<double> residuals;
};

/// Phase reconstruction from a dB mel spectrogram, starting from zero phase.
/// Output is kCanonicalLength samples at 12 kHz; the scale is relative
/// since the dB values carry no absolute reference.
GriffinLimTrace griffin_lim_trace(const MelSpectrogram& spec, int iterations = 60);
AudioClip griffin_lim(const MelSpectrogram& spec, int iterations = 60);

}  // namespace coughgan::features
