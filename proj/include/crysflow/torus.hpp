#pragma once

#include <cmath>

namespace crysflow {

// Canonical representative of x on the unit circle: x - floor(x), always in [0, 1).
// Differs from the two-branch form only at negative integers, where this
// returns 0 instead of 1.
inline double wrap(double x) {
  double r = x - std::floor(x);
  // x slightly below an integer can round up to exactly 1.0
  return r >= 1.0 ? 0.0 : r;
}

// Shortest signed displacement on the circle taking f0 to f1, in [-0.5, 0.5].
// The antipodal tie (f1 - f0 = 0.5 mod 1) resolves to -0.5.
inline double torus_velocity(double f0, double f1) {
  return wrap(f1 - f0 - 0.5) - 0.5;
}

// Signed minimum-image difference b - a on the circle, in [-0.5, 0.5).
inline double torus_delta(double a, double b) {
  return wrap(b - a + 0.5) - 0.5;
}

}  // namespace crysflow
