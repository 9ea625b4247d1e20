#pragma once

#include <filesystem>
#include <optional>

#include <torch/torch.h>

#include "aging/networks.hpp"

namespace aging {

struct OptimizerRefs {
  torch::optim::Optimizer* generator = nullptr;
  torch::optim::Optimizer* discriminator = nullptr;
};

// One archive with all five networks, the profile, format version, step and
// epoch counters and, when given, both optimizers' moment state.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, const OptimizerRefs& optim = {});

// Throws ValidationError when `expected` is set and differs from the stored
// profile, or when the format version is unknown; IoError when unreadable.
ModelBundle load_checkpoint(const std::filesystem::path& path,
                            const std::optional<SizeProfile>& expected = std::nullopt);

// Restores optimizer moments saved alongside the networks. Returns false when
// the checkpoint carries no optimizer state.
bool load_optimizer_state(const std::filesystem::path& path, const OptimizerRefs& optim);

}  // namespace aging
