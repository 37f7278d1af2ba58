#pragma once

// Seeded sampling used by every randomized check. The engine is mt19937_64 and
// the real-valued draws are built from its raw output, so sequences are the same
// on every standard library.

#include <cmath>
#include <cstdint>
#include <random>

#include "cvh/tensor.hpp"

namespace cvh {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 20240611u) : eng_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by Box-Muller (one value per call, the partner is discarded).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Tensor3 tensor(double scale = 1.0) {
    Tensor3 t;
    for (std::size_t i = 0; i < 9; ++i) t[i] = scale * uniform(-1.0, 1.0);
    return t;
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cvh
