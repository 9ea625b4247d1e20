#include <png.h>

#include <cstring>

#include "aging/data.hpp"
#include "aging/errors.hpp"

namespace aging {

Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode image " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode image " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width * img.height * 3)) {
    throw ContractError("write_png: raster size does not match its dimensions");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.rgb.data(), 0, nullptr)) {
    throw IoError("cannot write image " + path.string() + ": " + image.message);
  }
}

torch::Tensor image_to_tensor(const Image8& image) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(image.rgb.data()), {image.height, image.width, 3},
                              torch::kUInt8)
                 .to(torch::kFloat);
  return (hwc.permute({2, 0, 1}) / 255.0 * 2.0 - 1.0).contiguous();
}

Image8 tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw ContractError("tensor_to_image expects a (3, H, W) tensor");
  auto bytes = ((chw.detach().to(torch::kDouble).clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  Image8 out;
  out.height = chw.size(1);
  out.width = chw.size(2);
  out.rgb.assign(bytes.data_ptr<std::uint8_t>(), bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return out;
}

torch::Tensor load_image(const std::filesystem::path& path, const SizeProfile& profile) {
  auto t = image_to_tensor(read_png(path));
  if (t.size(1) == profile.image_side && t.size(2) == profile.image_side) return t;
  namespace F = torch::nn::functional;
  return F::interpolate(t.unsqueeze(0), F::InterpolateFuncOptions()
                                            .size(std::vector<std::int64_t>{profile.image_side, profile.image_side})
                                            .mode(torch::kBilinear)
                                            .align_corners(false))
      .squeeze(0);
}

}  // namespace aging
