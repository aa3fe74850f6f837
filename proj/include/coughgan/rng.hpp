#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace coughgan {

/// The single pseudo-random source used throughout the toolkit.
///
/// Wraps std::mt19937_64, whose output sequence is fixed by the standard.
/// Distributions are implemented here rather than taken from <random> because
/// the standard distributions are implementation-defined; with this class a
/// seed reproduces the same numbers on every conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n);

  /// Standard normal via the Box-Muller transform; the second value of each
  /// pair is cached for the next call.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent generator for a named sub-stream ("dsp", "gan", ...).
  static Rng substream(std::uint64_t root_seed, std::string_view name) {
    return Rng(derive_seed(root_seed, name));
  }

  static std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace coughgan
