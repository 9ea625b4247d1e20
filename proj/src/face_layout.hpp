#pragma once

// Geometry and colors shared by the synthetic renderer and the analytic oracles.
// Coordinates are normalized: row and column both in [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <torch/torch.h>

namespace aging::layout {

using Rgb = std::array<double, 3>;

inline constexpr Rgb kBackground{0.15, 0.15, 0.15};

inline constexpr Rgb kSkinTone{1.0, 0.85, 0.72};
inline constexpr double kYoungContrast = 0.75;
inline constexpr double kContrastDrop = 0.45;

inline constexpr Rgb kHairDark{0.30, 0.18, 0.08};
inline constexpr Rgb kHairLight{0.88, 0.88, 0.85};
inline constexpr double kHairTop = 0.02;
inline constexpr double kHairBottom = 0.11;
inline constexpr double kHairLeft = 0.28;
inline constexpr double kHairRight = 0.72;

inline constexpr double kFaceRow = 0.56;
inline constexpr double kFaceCol = 0.5;
inline constexpr double kFaceHalfHeight = 0.42;
inline constexpr double kMinHalfWidth = 0.36;
inline constexpr double kMaxHalfWidth = 0.42;

inline constexpr double kRingSpacing = 0.045;
inline constexpr int kMaxRings = 7;
inline constexpr double kRingHalfWidth = 0.0125;
inline constexpr double kRingDarkening = 0.45;

inline constexpr int kMarkerCount = 3;
inline constexpr double kMarkerRadius = 0.05;
inline constexpr double kMarkerSaturation = 0.85;
inline constexpr double kMarkerValue = 0.95;
inline constexpr double kMarkerMinSeparation = 0.16;
inline constexpr double kMarkerReach = 0.6;  // in face-ellipse units
inline constexpr double kMarkerSearchTop = 0.13;

inline double age_fraction(double age) { return std::clamp((age - 15.0) / 55.0, 0.0, 1.0); }
inline double age_from_fraction(double s) { return 15.0 + 55.0 * s; }
inline double contrast_for(double s) { return kYoungContrast - kContrastDrop * s; }

inline Rgb lerp(const Rgb& a, const Rgb& b, double f) {
  return {a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f};
}

inline double dot(const Rgb& a, const Rgb& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Rgb sub(const Rgb& a, const Rgb& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

inline Rgb hsv_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Hsv {
  double h = 0.0, s = 0.0, v = 0.0;
};

inline Hsv rgb_to_hsv(const Rgb& c) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? (mx - mn) / mx : 0.0;
  const double d = mx - mn;
  if (d <= 0) return out;
  double h;
  if (mx == c[0]) {
    h = (c[1] - c[2]) / d;
  } else if (mx == c[1]) {
    h = 2.0 + (c[2] - c[0]) / d;
  } else {
    h = 4.0 + (c[0] - c[1]) / d;
  }
  h /= 6.0;
  out.h = h - std::floor(h);
  return out;
}

// (3, S, S) tensor in [-1, 1] -> row-major RGB in [0, 1].
struct Raster {
  std::int64_t side = 0;
  std::vector<double> data;  // (row * side + col) * 3 + channel

  explicit Raster(const torch::Tensor& chw) {
    auto t = ((chw.detach().to(torch::kDouble).clamp(-1.0, 1.0) + 1.0) * 0.5).permute({1, 2, 0}).contiguous();
    side = t.size(0);
    data.assign(t.data_ptr<double>(), t.data_ptr<double>() + t.numel());
  }

  Rgb at(std::int64_t r, std::int64_t c) const {
    const auto i = static_cast<std::size_t>((r * side + c) * 3);
    return {data[i], data[i + 1], data[i + 2]};
  }

  // Bilinear sample at normalized (row, col), pixel centers at (i + 0.5) / side.
  Rgb sample(double row, double col) const {
    const double y = std::clamp(row * side - 0.5, 0.0, static_cast<double>(side - 1));
    const double x = std::clamp(col * side - 0.5, 0.0, static_cast<double>(side - 1));
    const auto r0 = static_cast<std::int64_t>(std::floor(y));
    const auto c0 = static_cast<std::int64_t>(std::floor(x));
    const auto r1 = std::min(r0 + 1, side - 1);
    const auto c1 = std::min(c0 + 1, side - 1);
    const double fy = y - r0, fx = x - c0;
    const auto top = lerp(at(r0, c0), at(r0, c1), fx);
    const auto bottom = lerp(at(r1, c0), at(r1, c1), fx);
    return lerp(top, bottom, fy);
  }
};

}  // namespace aging::layout
