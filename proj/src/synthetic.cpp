#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "aging/data.hpp"
#include "aging/errors.hpp"
#include "face_layout.hpp"

namespace aging {
namespace {

using namespace layout;

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double coverage(double signed_px) { return std::clamp(signed_px + 0.5, 0.0, 1.0); }

}  // namespace

IdentityMarkers identity_markers(std::uint64_t identity_seed) {
  std::mt19937_64 rng(mix(identity_seed, 0x1D));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  IdentityMarkers m;
  m.face_half_width = kMinHalfWidth + (kMaxHalfWidth - kMinHalfWidth) * unit(rng);
  while (static_cast<int>(m.spots.size()) < kMarkerCount) {
    const double a = (2.0 * unit(rng) - 1.0) * kMarkerReach;
    const double b = (2.0 * unit(rng) - 1.0) * kMarkerReach;
    if (a * a + b * b > kMarkerReach * kMarkerReach) continue;
    MarkerSpot spot{kFaceRow + b * kFaceHalfHeight, kFaceCol + a * m.face_half_width, unit(rng)};
    const bool clear = std::all_of(m.spots.begin(), m.spots.end(), [&](const MarkerSpot& o) {
      return std::hypot(o.row - spot.row, o.col - spot.col) >= kMarkerMinSeparation;
    });
    if (clear) m.spots.push_back(spot);
  }
  return m;
}

torch::Tensor synthesize_face(const SyntheticFaceSpec& spec) {
  if (spec.canvas < 16) throw ValidationError("synthetic canvas must be at least 16 pixels");
  if (!(spec.age >= kSyntheticMinAge && spec.age <= kSyntheticMaxAge)) {
    throw ValidationError("synthetic age must lie in [15, 70]");
  }
  const auto markers = identity_markers(spec.identity_seed);
  const double s = age_fraction(spec.age);
  const Rgb hair = lerp(kHairDark, kHairLight, s);
  const double contrast = contrast_for(s);
  const Rgb skin{kBackground[0] + contrast * kSkinTone[0], kBackground[1] + contrast * kSkinTone[1],
                 kBackground[2] + contrast * kSkinTone[2]};
  const int rings = static_cast<int>(std::floor(spec.age / 10.0));
  const double side = static_cast<double>(spec.canvas);
  const double rx = markers.face_half_width;

  std::vector<Rgb> marker_colors;
  for (const auto& spot : markers.spots) marker_colors.push_back(hsv_to_rgb(spot.hue, kMarkerSaturation, kMarkerValue));

  auto out = torch::empty({3, spec.canvas, spec.canvas}, torch::kDouble);
  auto acc = out.accessor<double, 3>();
  for (std::int64_t r = 0; r < spec.canvas; ++r) {
    const double v = (static_cast<double>(r) + 0.5) / side;
    for (std::int64_t c = 0; c < spec.canvas; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / side;
      Rgb px = kBackground;
      if (v >= kHairTop && v < kHairBottom && u >= kHairLeft && u < kHairRight) px = hair;

      const double du = u - kFaceCol, dv = v - kFaceRow;
      const double rho = std::sqrt((du / rx) * (du / rx) + (dv / kFaceHalfHeight) * (dv / kFaceHalfHeight));
      const double face = coverage((1.0 - rho) * std::min(rx, kFaceHalfHeight) * side);
      if (face > 0.0) {
        const double radius = std::hypot(du, dv);
        double ring = 0.0;
        for (int k = 1; k <= rings; ++k) {
          ring = std::max(ring, 1.0 - std::abs(radius - k * kRingSpacing) / kRingHalfWidth);
        }
        const double shade = 1.0 - kRingDarkening * std::max(ring, 0.0);
        const Rgb shaded{skin[0] * shade, skin[1] * shade, skin[2] * shade};
        px = lerp(px, shaded, face);
      }
      for (std::size_t i = 0; i < markers.spots.size(); ++i) {
        const auto& spot = markers.spots[i];
        const double d = std::hypot(v - spot.row, u - spot.col);
        const double cov = coverage((kMarkerRadius - d) * side);
        if (cov > 0.0) px = lerp(px, marker_colors[i], cov);
      }
      for (int ch = 0; ch < 3; ++ch) acc[ch][r][c] = px[ch] * 2.0 - 1.0;
    }
  }
  return out.to(torch::kFloat);
}

SyntheticDataset build_synthetic_dataset(const std::filesystem::path& root, std::int64_t n_identities,
                                         std::int64_t ages_per_identity, const SizeProfile& profile,
                                         std::uint64_t seed) {
  const auto age_slots = static_cast<std::int64_t>(kSyntheticMaxAge - kSyntheticMinAge) + 1;
  if (n_identities < 1 || ages_per_identity < 1) throw ConfigError("identity and per-identity counts must be >= 1");
  if (ages_per_identity > age_slots) {
    throw ConfigError("at most " + std::to_string(age_slots) + " distinct integer ages per identity");
  }
  profile.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());

  SyntheticDataset ds;
  ds.manifest = root / "manifest.csv";
  const std::int64_t n_test = n_identities / 10;
  std::vector<std::int64_t> ages(static_cast<std::size_t>(age_slots));
  for (std::int64_t i = 0; i < n_identities; ++i) {
    const auto identity_seed = mix(seed, static_cast<std::uint64_t>(i));
    ds.identity_seeds.push_back(identity_seed);
    std::iota(ages.begin(), ages.end(), static_cast<std::int64_t>(kSyntheticMinAge));
    std::mt19937_64 rng(mix(identity_seed, 0xA6E));
    // Partial Fisher-Yates: the first ages_per_identity slots become the sample.
    for (std::int64_t k = 0; k < ages_per_identity; ++k) {
      std::uniform_int_distribution<std::int64_t> pick(k, age_slots - 1);
      std::swap(ages[static_cast<std::size_t>(k)], ages[static_cast<std::size_t>(pick(rng))]);
    }
    char dir[32];
    std::snprintf(dir, sizeof(dir), "id_%05lld", static_cast<long long>(i));
    std::filesystem::create_directories(root / dir, ec);
    if (ec) throw IoError("cannot create " + (root / dir).string() + ": " + ec.message());
    for (std::int64_t k = 0; k < ages_per_identity; ++k) {
      const auto age = ages[static_cast<std::size_t>(k)];
      const auto rel = std::filesystem::path(dir) / (std::to_string(age) + ".png");
      write_png(root / rel, tensor_to_image(synthesize_face({identity_seed, static_cast<double>(age), profile.image_side})));
      ds.entries.push_back(ManifestEntry{rel.generic_string(), age, "", i >= n_identities - n_test ? Split::kTest : Split::kTrain});
    }
  }
  write_manifest(ds.manifest, ds.entries);
  return ds;
}

std::optional<std::int64_t> synthetic_identity_index(const ManifestEntry& entry) {
  const auto pos = entry.path.find("id_");
  if (pos == std::string::npos) return std::nullopt;
  std::int64_t idx = 0;
  std::size_t i = pos + 3;
  if (i >= entry.path.size() || !std::isdigit(static_cast<unsigned char>(entry.path[i]))) return std::nullopt;
  while (i < entry.path.size() && std::isdigit(static_cast<unsigned char>(entry.path[i]))) {
    idx = idx * 10 + (entry.path[i] - '0');
    ++i;
  }
  return idx;
}

}  // namespace aging
