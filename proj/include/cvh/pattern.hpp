#pragma once

// Y-periodic two-phase patterns on the unit cell and their sampling at x/eta.

#include <array>
#include <cmath>
#include <string>

#include "cvh/error.hpp"

namespace cvh {

enum class PatternKind { homogeneous, laminate, checkerboard };

struct Pattern {
  PatternKind kind = PatternKind::homogeneous;
  double fraction = 0.5;  // laminate: phase 0 occupies y_axis < fraction
  int axis = 0;

  static Pattern homogeneous() { return {}; }
  static Pattern laminate(double fraction, int axis = 0) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("laminate fraction must lie in (0, 1)");
    if (axis < 0 || axis > 2) throw ConfigError("laminate axis must be 0, 1 or 2");
    return {PatternKind::laminate, fraction, axis};
  }
  static Pattern checkerboard() { return {PatternKind::checkerboard, 0.5, 0}; }

  static Pattern parse(const std::string& name, double fraction, int axis) {
    if (name == "homogeneous") return homogeneous();
    if (name == "laminate") return laminate(fraction, axis);
    if (name == "checkerboard") return checkerboard();
    throw ConfigError("unknown pattern '" + name + "' (homogeneous | laminate | checkerboard)");
  }

  /// Phase (0 or 1) at a point y of the unit cell; y is reduced modulo 1.
  int phase(const std::array<double, 3>& y) const {
    auto frac = [](double v) { return v - std::floor(v); };
    switch (kind) {
      case PatternKind::homogeneous: return 0;
      case PatternKind::laminate: return frac(y[static_cast<std::size_t>(axis)]) < fraction ? 0 : 1;
      case PatternKind::checkerboard: {
        int s = 0;
        for (double v : y) s += static_cast<int>(std::floor(2.0 * frac(v)));
        return s % 2;
      }
    }
    return 0;
  }

  double phase0_fraction() const {
    switch (kind) {
      case PatternKind::homogeneous: return 1.0;
      case PatternKind::laminate: return fraction;
      case PatternKind::checkerboard: return 0.5;
    }
    return 1.0;
  }
};

/// Cell-point coordinate of fine cell i when c fine cells make up one period.
inline double cell_y(int i, int c) {
  const int r = ((i % c) + c) % c;
  return (r + 0.5) / c;
}

}  // namespace cvh
