#include <algorithm>
#include <numbers>
#include <numeric>

#include "aging/data.hpp"
#include "aging/errors.hpp"
#include "face_layout.hpp"

namespace aging {
namespace {

using namespace layout;

constexpr double kMinReadableContrast = 0.05;
constexpr int kRingAngles = 96;
constexpr int kMinRingSamples = 8;
constexpr double kRingPresentRatio = 0.9;
constexpr double kMarkerSaturationCut = 0.5;
constexpr double kMarkerValueCut = 0.35;
constexpr double kRingSkipSaturation = 0.45;
constexpr std::size_t kMaxMarkers = 6;
constexpr double kUnmatchedMarkerPenalty = 0.5;

Rgb mean_of(const std::vector<Rgb>& px) {
  Rgb m{0, 0, 0};
  for (const auto& p : px) {
    for (int c = 0; c < 3; ++c) m[c] += p[c];
  }
  for (int c = 0; c < 3; ++c) m[c] /= static_cast<double>(px.size());
  return m;
}

Rgb median_of(std::vector<Rgb> px) {
  Rgb m{};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> ch;
    ch.reserve(px.size());
    for (const auto& p : px) ch.push_back(p[c]);
    const auto mid = ch.begin() + static_cast<std::ptrdiff_t>(ch.size() / 2);
    std::nth_element(ch.begin(), mid, ch.end());
    m[c] = *mid;
  }
  return m;
}

double face_rho(double row, double col) {
  const double du = (col - kFaceCol) / kMinHalfWidth;
  const double dv = (row - kFaceRow) / kFaceHalfHeight;
  return std::sqrt(du * du + dv * dv);
}

double luminance(const Rgb& c) { return (c[0] + c[1] + c[2]) / 3.0; }

// Number of leading wrinkle rings, or nullopt when the ring pattern is not a
// clean prefix (e.g. a gap followed by another ring) or no ring shows.
std::optional<std::int64_t> count_rings(const Raster& img) {
  std::vector<bool> present;
  for (int k = 1; k <= kMaxRings; ++k) {
    const double r = k * kRingSpacing;
    double ring_sum = 0.0, gap_sum = 0.0;
    int n = 0;
    for (int a = 0; a < kRingAngles; ++a) {
      const double theta = 2.0 * std::numbers::pi * (a + 0.5) / kRingAngles;
      const double sr = std::sin(theta), cr = std::cos(theta);
      const double radii[3] = {r, r - 0.5 * kRingSpacing, r + 0.5 * kRingSpacing};
      Rgb samples[3];
      bool usable = true;
      for (int i = 0; i < 3; ++i) {
        const double row = kFaceRow + radii[i] * sr, col = kFaceCol + radii[i] * cr;
        if (face_rho(row, col) > 0.95) usable = false;
        samples[i] = img.sample(row, col);
        if (rgb_to_hsv(samples[i]).s > kRingSkipSaturation) usable = false;
      }
      if (!usable) continue;
      ring_sum += luminance(samples[0]);
      gap_sum += 0.5 * (luminance(samples[1]) + luminance(samples[2]));
      ++n;
    }
    present.push_back(n >= kMinRingSamples && gap_sum > 0.0 && ring_sum / gap_sum < kRingPresentRatio);
  }
  const auto first_absent = std::find(present.begin(), present.end(), false);
  if (std::find(first_absent, present.end(), true) != present.end()) return std::nullopt;
  const auto count = static_cast<std::int64_t>(first_absent - present.begin());
  if (count == 0) return std::nullopt;
  return count;
}

}  // namespace

std::optional<OracleFeatures> oracle_features(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) != image.size(2) || image.size(1) < 16) {
    return std::nullopt;
  }
  const Raster img(image);
  const double side = static_cast<double>(img.side);
  std::vector<Rgb> bg, hair, skin;
  for (std::int64_t r = 0; r < img.side; ++r) {
    const double v = (r + 0.5) / side;
    for (std::int64_t c = 0; c < img.side; ++c) {
      const double u = (c + 0.5) / side;
      if ((u < 0.05 || u > 0.95) && v > 0.3 && v < 0.8) bg.push_back(img.at(r, c));
      if (v > 0.035 && v < 0.095 && u > 0.33 && u < 0.67) hair.push_back(img.at(r, c));
      // Caps of the face above and below the outermost ring slot; markers never reach them.
      if (face_rho(v, u) < 0.9 && std::hypot(v - kFaceRow, u - kFaceCol) > kMaxRings * kRingSpacing + 0.03) {
        skin.push_back(img.at(r, c));
      }
    }
  }
  if (bg.empty() || hair.empty() || skin.empty()) return std::nullopt;

  const Rgb bg_mean = mean_of(bg);
  const Rgb skin_median = median_of(skin);
  OracleFeatures f;
  f.contrast = dot(sub(skin_median, bg_mean), kSkinTone) / dot(kSkinTone, kSkinTone);
  if (!std::isfinite(f.contrast) || f.contrast < kMinReadableContrast) return std::nullopt;
  f.contrast_age = age_from_fraction((kYoungContrast - f.contrast) / kContrastDrop);

  const Rgb span = sub(kHairLight, kHairDark);
  f.hair_age = age_from_fraction(dot(sub(mean_of(hair), kHairDark), span) / dot(span, span));
  f.ring_count = count_rings(img);
  return f;
}

std::optional<double> oracle_age_readout(const torch::Tensor& image) {
  const auto f = oracle_features(image);
  if (!f) return std::nullopt;
  // Least squares over the two continuous readings plus a squared distance to
  // the decade bracket implied by the ring count.
  const double sum = f->contrast_age + f->hair_age;
  double age = 0.5 * sum;
  if (f->ring_count) {
    const double lo = 10.0 * static_cast<double>(*f->ring_count);
    const double hi = lo + 10.0;
    if (age < lo) age = (sum + lo) / 3.0;
    if (age > hi) age = (sum + hi) / 3.0;
  }
  if (!std::isfinite(age)) return std::nullopt;
  return age;
}

std::vector<DetectedMarker> detect_markers(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ContractError("detect_markers expects a (3, H, W) image");
  const Raster img(image);
  const auto n = img.side;
  const double side = static_cast<double>(n);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * n), 0);
  std::vector<double> hues(mask.size(), 0.0);
  for (std::int64_t r = 0; r < n; ++r) {
    if ((r + 0.5) / side <= kMarkerSearchTop) continue;
    for (std::int64_t c = 0; c < n; ++c) {
      const auto hsv = rgb_to_hsv(img.at(r, c));
      if (hsv.s > kMarkerSaturationCut && hsv.v > kMarkerValueCut) {
        mask[static_cast<std::size_t>(r * n + c)] = 1;
        hues[static_cast<std::size_t>(r * n + c)] = hsv.h;
      }
    }
  }
  const auto min_area = std::max<std::int64_t>(3, static_cast<std::int64_t>(std::lround(0.001 * side * side)));
  std::vector<DetectedMarker> found;
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < n * n; ++start) {
    if (mask[static_cast<std::size_t>(start)] != 1) continue;
    double sr = 0, sc = 0, hs = 0, hc = 0;
    std::int64_t area = 0;
    stack.assign(1, start);
    mask[static_cast<std::size_t>(start)] = 2;
    while (!stack.empty()) {
      const auto idx = stack.back();
      stack.pop_back();
      const auto r = idx / n, c = idx % n;
      ++area;
      sr += (r + 0.5) / side;
      sc += (c + 0.5) / side;
      const double angle = 2.0 * std::numbers::pi * hues[static_cast<std::size_t>(idx)];
      hs += std::sin(angle);
      hc += std::cos(angle);
      const std::int64_t nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= n || nb[1] < 0 || nb[1] >= n) continue;
        const auto j = static_cast<std::size_t>(nb[0] * n + nb[1]);
        if (mask[j] == 1) {
          mask[j] = 2;
          stack.push_back(static_cast<std::int64_t>(j));
        }
      }
    }
    if (area < min_area) continue;
    double hue = std::atan2(hs, hc) / (2.0 * std::numbers::pi);
    hue -= std::floor(hue);
    found.push_back({sr / area, sc / area, hue, area});
  }
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.area > b.area; });
  if (found.size() > kMaxMarkers) found.resize(kMaxMarkers);
  return found;
}

double oracle_identity_distance(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ContractError("identity distance needs images of equal shape");
  auto ma = detect_markers(a);
  auto mb = detect_markers(b);
  if (ma.empty() || mb.empty()) return kUndetectableIdentityDistance;
  if (ma.size() > mb.size()) std::swap(ma, mb);
  std::vector<std::size_t> perm(mb.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const auto& p = ma[i];
      const auto& q = mb[perm[i]];
      const double dh = std::abs(p.hue - q.hue);
      cost += std::hypot(p.row - q.row, p.col - q.col) + std::min(dh, 1.0 - dh);
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  best += kUnmatchedMarkerPenalty * static_cast<double>(mb.size() - ma.size());
  return best / static_cast<double>(mb.size());
}

}  // namespace aging
