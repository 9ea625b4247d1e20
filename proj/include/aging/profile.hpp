#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace aging {

// Network size profile. Shapes follow the (side, side, channels) convention;
// tensors themselves are laid out NCHW.
struct SizeProfile {
  std::int64_t image_side = 64;
  std::int64_t base_channels = 16;
  std::int64_t encoding_side = 16;
  std::int64_t encoding_channels = 64;  // D
  std::int64_t num_classes = 100;       // K
  std::int64_t discriminator_downsamples = 3;

  static SizeProfile paper();
  static SizeProfile desk();
  // "paper" or "desk"; anything else is a ConfigError.
  static SizeProfile named(std::string_view name);

  // Throws ConfigError when the fields are inconsistent.
  void validate() const;

  // Side of the discriminator's logit grid for an image_side input.
  std::int64_t patch_grid_side() const;

  std::string name() const;

  friend bool operator==(const SizeProfile&, const SizeProfile&) = default;
};

}  // namespace aging
