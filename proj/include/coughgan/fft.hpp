#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace coughgan::fft {

/// Precomputed twiddles and bit-reversal permutation for one power-of-two size.
class Plan {
 public:
  explicit Plan(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  /// In-place forward transform, X[k] = sum x[n] e^{-2 pi i k n / N}.
  void forward(std::span<std::complex<double>> data) const;
  /// In-place inverse transform including the 1/N factor.
  void inverse(std::span<std::complex<double>> data) const;

  /// Real input of length N to N/2 + 1 non-negative-frequency bins.
  std::vector<std::complex<double>> rfft(std::span<const double> x) const;
  /// Inverse of rfft: the spectrum is treated as Hermitian; imaginary parts of
  /// the DC and Nyquist bins are ignored.
  std::vector<double> irfft(std::span<const std::complex<double>> half) const;

 private:
  void transform(std::span<std::complex<double>> data, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;  // e^{-2 pi i k / N}, k < N/2
};

}  // namespace coughgan::fft
