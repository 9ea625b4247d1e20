#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "aging/profile.hpp"

namespace aging {

// ---- raster I/O ---------------------------------------------------------------

// 8-bit interleaved RGB raster.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

// (3, H, W) float tensor with values mapped from [0, 255] to [-1, 1].
torch::Tensor image_to_tensor(const Image8& image);
// Inverse of image_to_tensor with rounding and clamping.
Image8 tensor_to_image(const torch::Tensor& chw);

// ---- manifest -------------------------------------------------------------------

enum class Split { kTrain, kTest };

struct ManifestEntry {
  std::string path;  // relative paths resolve against the manifest's directory
  std::int64_t age = 0;
  std::string gender;  // empty when unknown
  Split split = Split::kTrain;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr std::int64_t kMaxManifestAge = 99;
inline constexpr const char* kManifestHeader = "path,age,gender,split";

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::filesystem::path resolve_entry(const std::filesystem::path& manifest, const ManifestEntry& entry);
std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split);

// Decodes, bilinearly resizes to the profile's square side and maps to [-1, 1].
torch::Tensor load_image(const std::filesystem::path& path, const SizeProfile& profile);

// ---- synthetic faces ------------------------------------------------------------

inline constexpr double kSyntheticMinAge = 15.0;
inline constexpr double kSyntheticMaxAge = 70.0;

struct SyntheticFaceSpec {
  std::uint64_t identity_seed = 0;
  double age = 30.0;
  std::int64_t canvas = 64;
};

// Colored spot in normalized canvas coordinates ([0, 1] along each axis).
struct MarkerSpot {
  double row = 0.0;
  double col = 0.0;
  double hue = 0.0;  // [0, 1)

  friend bool operator==(const MarkerSpot&, const MarkerSpot&) = default;
};

// Everything about a synthetic face that depends on identity only.
struct IdentityMarkers {
  double face_half_width = 0.0;  // ellipse semi-axis along columns, normalized
  std::vector<MarkerSpot> spots;

  friend bool operator==(const IdentityMarkers&, const IdentityMarkers&) = default;
};

IdentityMarkers identity_markers(std::uint64_t identity_seed);

// Renders a (3, canvas, canvas) tensor in [-1, 1]. Age shows up as falling
// skin contrast, floor(age / 10) wrinkle rings and a lightening hair band.
torch::Tensor synthesize_face(const SyntheticFaceSpec& spec);

// Analytic age estimate for synthetic-style faces; nullopt when unreadable.
std::optional<double> oracle_age_readout(const torch::Tensor& image);

// Feature-level pieces of the readout, exposed for diagnostics and tests.
struct OracleFeatures {
  double contrast_age = 0.0;
  double hair_age = 0.0;
  std::optional<std::int64_t> ring_count;
  double contrast = 0.0;
};
std::optional<OracleFeatures> oracle_features(const torch::Tensor& image);

struct DetectedMarker {
  double row = 0.0;
  double col = 0.0;
  double hue = 0.0;
  std::int64_t area = 0;
};
std::vector<DetectedMarker> detect_markers(const torch::Tensor& image);

inline constexpr double kUndetectableIdentityDistance = 2.0;

// Mean position + hue discrepancy of matched marker spots.
double oracle_identity_distance(const torch::Tensor& a, const torch::Tensor& b);

struct SyntheticDataset {
  std::filesystem::path manifest;
  std::vector<ManifestEntry> entries;
  std::vector<std::uint64_t> identity_seeds;
};

// Test split: the last n_identities / 10 identities.
SyntheticDataset build_synthetic_dataset(const std::filesystem::path& root, std::int64_t n_identities,
                                         std::int64_t ages_per_identity, const SizeProfile& profile,
                                         std::uint64_t seed);

// Index of the identity that rendered `entry`, parsed from id_XXXXX/ path prefixes.
std::optional<std::int64_t> synthetic_identity_index(const ManifestEntry& entry);

}  // namespace aging
