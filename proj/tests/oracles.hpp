#pragma once

// Independent reference implementations. Each one is written straight from
// the defining formula, without sharing code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

struct Interval {
  std::size_t start, end;
  bool operator==(const Interval&) const = default;
};

/// Comparator state machine walked one sample at a time.
inline std::vector<Interval> raw_segments(const std::vector<double>& x, double high, double low,
                                          std::size_t hangover) {
  std::vector<Interval> out;
  bool open = false;
  std::size_t start = 0, quiet = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::fabs(x[i]);
    if (!open) {
      if (a >= high) {
        open = true;
        start = i;
        quiet = 0;
      }
      continue;
    }
    if (a < low) {
      ++quiet;
      if (quiet == hangover + 1) {
        out.push_back({start, i});
        open = false;
      }
    } else {
      quiet = 0;
    }
  }
  if (open) out.push_back({start, x.size()});
  return out;
}

/// Pads, clamps, enforces the minimum length and merges overlaps.
inline std::vector<Interval> segments(const std::vector<double>& x, int rate, double high_factor, double low_factor,
                                      double pad_s, double hangover_s, double min_s) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  if (x.empty() || sq == 0.0) return {};
  const double level = std::sqrt(sq / static_cast<double>(x.size()));
  const auto hang = static_cast<std::size_t>(std::llround(hangover_s * rate));
  const auto pad = static_cast<long long>(std::llround(pad_s * rate / 2.0));
  const auto min_len = static_cast<long long>(std::ceil(min_s * rate - 1e-9));
  const auto n = static_cast<long long>(x.size());

  std::vector<Interval> merged;
  for (const auto& r : raw_segments(x, high_factor * level, low_factor * level, hang)) {
    long long a = std::max(0LL, static_cast<long long>(r.start) - pad);
    long long b = std::min(n, static_cast<long long>(r.end) + pad);
    if (b - a < min_len) {
      if (n < min_len) continue;
      b = std::min(n, a + min_len);
      a = std::max(0LL, b - min_len);
    }
    const Interval iv{static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
    if (!merged.empty() && iv.start < merged.back().end) merged.back().end = std::max(merged.back().end, iv.end);
    else merged.push_back(iv);
  }
  return merged;
}

/// X[k] = sum_n x[n] exp(-2 pi i k n / N) for k in [0, bins).
inline std::vector<std::complex<double>> dft(const std::vector<double>& x, std::size_t bins) {
  const std::size_t n = x.size();
  std::vector<double> c(n), s(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    c[j] = std::cos(w);
    s[j] = std::sin(w);
  }
  std::vector<std::complex<double>> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    std::size_t idx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      re += x[j] * c[idx];
      im -= x[j] * s[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    out[k] = {re, im};
  }
  return out;
}

inline double slaney_mel(double hz) {
  const double f_sp = 200.0 / 3.0, min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp, logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double slaney_hz(double mel) {
  const double f_sp = 200.0 / 3.0, min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp, logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

/// n_mels x (n_fft/2+1) triangles with area normalization.
inline std::vector<std::vector<double>> mel_bank(double sr, std::size_t n_fft, std::size_t n_mels, double fmin,
                                                 double fmax) {
  std::vector<double> hz(n_mels + 2);
  const double lo = slaney_mel(fmin), hi = slaney_mel(fmax);
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = slaney_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  std::vector<std::vector<double>> bank(n_mels, std::vector<double>(n_fft / 2 + 1, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m)
    for (std::size_t k = 0; k <= n_fft / 2; ++k) {
      const double f = sr * static_cast<double>(k) / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > hz[m] && f <= hz[m + 1]) w = (f - hz[m]) / (hz[m + 1] - hz[m]);
      else if (f > hz[m + 1] && f < hz[m + 2]) w = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
      bank[m][k] = w * 2.0 / (hz[m + 2] - hz[m]);
    }
  return bank;
}

/// Crop or pad to `length`, reflect-pad, Hann-window, DFT, mel-project and
/// convert to dB relative to the maximum, floored at -top_db.
inline std::vector<std::vector<double>> mel_db(const std::vector<double>& segment, std::size_t length,
                                               std::size_t n_fft, std::size_t hop, std::size_t n_mels, double sr,
                                               double top_db) {
  std::vector<double> x(length, 0.0);
  if (segment.size() >= length) {
    const std::size_t off = (segment.size() - length) / 2;
    for (std::size_t i = 0; i < length; ++i) x[i] = segment[off + i];
  } else {
    const std::size_t off = (length - segment.size()) / 2;
    for (std::size_t i = 0; i < segment.size(); ++i) x[off + i] = segment[i];
  }
  const std::size_t half = n_fft / 2;
  const auto n = static_cast<long long>(length);
  auto reflect = [&](long long i) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return x[static_cast<std::size_t>(i)];
  };
  const auto bank = mel_bank(sr, n_fft, n_mels, 0.0, sr / 2.0);
  const std::size_t frames = 1 + length / hop;
  std::vector<std::vector<double>> mel(n_mels, std::vector<double>(frames, 0.0));
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < n_fft; ++j) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(j) / n_fft));
      frame[j] = w * reflect(static_cast<long long>(t * hop + j) - static_cast<long long>(half));
    }
    const auto spec = dft(frame, half + 1);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= half; ++k) acc += bank[m][k] * std::norm(spec[k]);
      mel[m][t] = acc;
    }
  }
  double ref = 0.0;
  for (const auto& row : mel) ref = std::max(ref, *std::max_element(row.begin(), row.end()));
  const double amin = 1e-10;
  for (auto& row : mel)
    for (double& v : row)
      v = std::max(10.0 * std::log10(std::max(amin, v)) - 10.0 * std::log10(std::max(amin, ref)), -top_db);
  return mel;
}

/// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every coordinate of `x`.
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f,
                                            double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps exactly
/// vanishing components from dividing by zero.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// |H(e^{jw})| of a cascade of biquads evaluated term by term.
inline double biquad_cascade_magnitude(const std::vector<std::array<double, 5>>& sections, double freq, double sr) {
  const double w = 2.0 * std::numbers::pi * freq / sr;
  const std::complex<double> z1 = std::polar(1.0, -w), z2 = std::polar(1.0, -2.0 * w);
  std::complex<double> h = 1.0;
  for (const auto& s : sections) h *= (s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[3] * z1 + s[4] * z2);
  return std::abs(h);
}

}  // namespace oracle
