#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "vinedmp/image.hpp"

namespace vinedmp {

/// HSV with all channels in [0, 1]; hue measured in turns.
struct Hsv {
  double h, s, v;
};

inline Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, mx > 0.0 ? d / mx : 0.0, mx};
  if (d > 0.0) {
    double h;
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = 2.0 + (b - r) / d;
    else
      h = 4.0 + (r - g) / d;
    h /= 6.0;
    out.h = h - std::floor(h);
  }
  return out;
}

inline std::array<double, 3> hsv_to_rgb(Hsv c) {
  const double h = (c.h - std::floor(c.h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = c.v * (1.0 - c.s);
  const double q = c.v * (1.0 - c.s * f);
  const double t = c.v * (1.0 - c.s * (1.0 - f));
  switch (i) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// Rotates the hue of an 8-bit color by `turns`.
inline Rgb shift_hue(Rgb c, double turns) {
  auto hsv = rgb_to_hsv(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
  hsv.h += turns;
  const auto rgb = hsv_to_rgb(hsv);
  return {to_byte(rgb[0] * 255.0), to_byte(rgb[1] * 255.0), to_byte(rgb[2] * 255.0)};
}

}  // namespace vinedmp
