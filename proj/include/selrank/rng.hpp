#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>

namespace selrank {

// Deterministic random source. All stochastic components (Gumbel noise,
// dropout, initialization, triple sampling) draw from an explicitly seeded
// instance; nothing in the library touches global RNG state. The uniform
// draw is computed from raw engine output so sequences are reproducible
// across standard library implementations.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on (0, 1), both endpoints excluded.
  double uniform01() {
    const std::uint64_t bits = engine_() >> 11;  // top 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling over the smallest covering power of two.
    if (n == 0) return 0;
    const std::uint64_t mask = ~std::uint64_t{0} >> std::countl_zero((n - 1) | 1);
    std::uint64_t draw;
    do {
      draw = engine_() & mask;
    } while (draw >= n);
    return draw;
  }

  std::uint64_t raw() { return engine_(); }

  // Derives an independent stream; used to give each training concern
  // (noise, dropout, sampling) its own deterministic sequence.
  SeededRng fork(std::uint64_t salt) {
    return SeededRng(engine_() ^ (salt * 0x9e3779b97f4a7c15ULL));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace selrank
