#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>
#include <algorithm>

#include <unistd.h>

#include <torch/torch.h>

#include "aging/profile.hpp"

// libtorch defines its own CHECK; doctest's must win in test code.
#undef CHECK
#include <doctest.h>

namespace testing {

// Smallest profile the networks accept; keeps training tests fast.
inline aging::SizeProfile tiny_profile() {
  return aging::SizeProfile{.image_side = 32,
                            .base_channels = 4,
                            .encoding_side = 8,
                            .encoding_channels = 16,
                            .num_classes = 100,
                            .discriminator_downsamples = 2};
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("aging_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

// FNV-1a over every regular file's relative path and bytes, in sorted order.
inline std::uint64_t hash_tree(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& f : files) {
    for (char c : std::filesystem::relative(f, root).generic_string()) mix(static_cast<unsigned char>(c));
    std::ifstream in(f, std::ios::binary);
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) mix(static_cast<unsigned char>(*it));
  }
  return h;
}

}  // namespace testing
