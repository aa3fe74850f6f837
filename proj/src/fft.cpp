#include "coughgan/fft.hpp"

#include <numbers>

#include "coughgan/error.hpp"

namespace coughgan::fft {

Plan::Plan(std::size_t n) : n_(n) {
  if (n < 2 || (n & (n - 1)) != 0) throw DomainError("FFT size must be a power of two >= 2");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  bitrev_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    bitrev_[i] = r;
  }
  twiddle_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k)
    twiddle_[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
}

void Plan::transform(std::span<std::complex<double>> a, bool inverse) const {
  if (a.size() != n_) throw ShapeError("FFT input length does not match plan size");
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n_ / len;
    for (std::size_t i = 0; i < n_; i += len) {
      for (std::size_t j = 0; j < half; ++j) {
        std::complex<double> w = twiddle_[j * step];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

void Plan::forward(std::span<std::complex<double>> data) const { transform(data, false); }

void Plan::inverse(std::span<std::complex<double>> data) const {
  transform(data, true);
  const double inv = 1.0 / static_cast<double>(n_);
  for (auto& v : data) v *= inv;
}

std::vector<std::complex<double>> Plan::rfft(std::span<const double> x) const {
  if (x.size() != n_) throw ShapeError("rfft input length does not match plan size");
  std::vector<std::complex<double>> buf(x.begin(), x.end());
  forward(buf);
  buf.resize(n_ / 2 + 1);
  return buf;
}

std::vector<double> Plan::irfft(std::span<const std::complex<double>> half) const {
  if (half.size() != n_ / 2 + 1) throw ShapeError("irfft input must hold N/2 + 1 bins");
  std::vector<std::complex<double>> buf(n_);
  buf[0] = half[0].real();
  buf[n_ / 2] = half[n_ / 2].real();
  for (std::size_t k = 1; k < n_ / 2; ++k) {
    buf[k] = half[k];
    buf[n_ - k] = std::conj(half[k]);
  }
  inverse(buf);
  std::vector<double> out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = buf[i].real();
  return out;
}

}  // namespace coughgan::fft
