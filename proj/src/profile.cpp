#include "aging/profile.hpp"

#include "aging/errors.hpp"

namespace aging {

SizeProfile SizeProfile::paper() {
  return SizeProfile{.image_side = 256,
                     .base_channels = 64,
                     .encoding_side = 64,
                     .encoding_channels = 256,
                     .num_classes = 100,
                     .discriminator_downsamples = 4};
}

SizeProfile SizeProfile::desk() {
  return SizeProfile{.image_side = 64,
                     .base_channels = 16,
                     .encoding_side = 16,
                     .encoding_channels = 64,
                     .num_classes = 100,
                     .discriminator_downsamples = 3};
}

SizeProfile SizeProfile::named(std::string_view name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown profile '" + std::string(name) + "' (expected paper or desk)");
}

void SizeProfile::validate() const {
  if (image_side <= 0 || base_channels <= 0 || num_classes < 2 || discriminator_downsamples < 1) {
    throw ConfigError("profile fields must be positive and num_classes >= 2");
  }
  if (image_side % 4 != 0 || encoding_side * 4 != image_side) {
    throw ConfigError("encoding_side must equal image_side / 4");
  }
  if (encoding_channels != 4 * base_channels) {
    throw ConfigError("encoding_channels must equal 4 * base_channels");
  }
  const std::int64_t factor = std::int64_t{1} << discriminator_downsamples;
  if (image_side % factor != 0 || image_side / factor < 2) {
    throw ConfigError("image_side too small for the discriminator depth");
  }
}

std::int64_t SizeProfile::patch_grid_side() const {
  // k4 s2 p1 halves an even side; the closing k4 s1 p1 conv removes one.
  return (image_side >> discriminator_downsamples) - 1;
}

std::string SizeProfile::name() const {
  if (*this == paper()) return "paper";
  if (*this == desk()) return "desk";
  return "custom";
}

}  // namespace aging
