#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "aging/age_embedding.hpp"
#include "aging/profile.hpp"

namespace aging {

// Conv2d whose weight is divided by its largest singular value, estimated by
// power iteration on the (out, in*kh*kw) reshaped kernel. One iteration runs per
// forward pass in training mode; eval mode reuses the stored estimate.
class SpectralConv2dImpl : public torch::nn::Module {
 public:
  struct Options {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    bool reflect = false;
  };

  SpectralConv2dImpl(const Options& options, torch::Generator& gen);

  torch::Tensor forward(const torch::Tensor& x);

  // Kernel after division by the current sigma estimate.
  torch::Tensor normalized_weight() const;
  torch::Tensor sigma() const;
  void power_iterate(int iterations);

  const torch::Tensor& raw_weight() const { return weight_; }

 private:
  Options options_;
  torch::Tensor weight_;
  torch::Tensor bias_;
  torch::Tensor u_;
};
TORCH_MODULE(SpectralConv2d);

// x + conv(relu(conv(x))) with spectral-normalized 3x3 convolutions.
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(std::int64_t channels, torch::Generator& gen);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  SpectralConv2d conv1_{nullptr};
  SpectralConv2d conv2_{nullptr};
};
TORCH_MODULE(EncoderBlock);

// x + IN(conv(relu(IN(conv(x))))).
class GeneratorBlockImpl : public torch::nn::Module {
 public:
  explicit GeneratorBlockImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::InstanceNorm2d norm1_{nullptr};
  torch::nn::InstanceNorm2d norm2_{nullptr};
};
TORCH_MODULE(GeneratorBlock);

// Identity encoder E: (N, 3, S, S) -> (N, D, S/4, S/4).
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const SizeProfile& profile, std::uint64_t seed);
  torch::Tensor forward(const torch::Tensor& images);

  const SizeProfile& profile() const { return profile_; }
  std::vector<SpectralConv2d> spectral_convs() const;

 private:
  SizeProfile profile_;
  SpectralConv2d stem_{nullptr};
  SpectralConv2d down1_{nullptr};
  SpectralConv2d down2_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
};
TORCH_MODULE(Encoder);

// Generator G: (N, D, S/4, S/4) -> (N, 3, S, S) in [-1, 1].
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(const SizeProfile& profile, std::uint64_t seed);
  torch::Tensor forward(const torch::Tensor& encoding);

  const SizeProfile& profile() const { return profile_; }

 private:
  SizeProfile profile_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Generator);

// Age estimator head C: global average pooling followed by a weight-normalized,
// bias-free linear layer with K outputs. Row j of weight() is the aging basis a_j.
class EstimatorHeadImpl : public torch::nn::Module {
 public:
  EstimatorHeadImpl(const SizeProfile& profile, std::uint64_t seed);

  // Logits (N, K).
  torch::Tensor forward(const torch::Tensor& encoding);
  // g_j * v_j / |v_j|, shape (K, D).
  torch::Tensor weight() const;
  // v_j / |v_j|.
  torch::Tensor direction() const;
  const torch::Tensor& gain() const { return gain_; }
  torch::Tensor bias() const;

  const SizeProfile& profile() const { return profile_; }

 private:
  SizeProfile profile_;
  torch::Tensor direction_;
  torch::Tensor gain_;
};
TORCH_MODULE(EstimatorHead);

// PatchGAN discriminator: stride-2 4x4 spectral-normalized convolutions with
// leaky ReLU, then a 1-channel 4x4 convolution. Emits raw logits (N, 1, P, P).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const SizeProfile& profile, std::uint64_t seed);
  torch::Tensor forward(const torch::Tensor& images);

 private:
  SizeProfile profile_;
  torch::nn::ModuleList convs_{nullptr};
};
TORCH_MODULE(Discriminator);

Encoder build_encoder(const SizeProfile& profile, std::uint64_t seed);
Generator build_generator(const SizeProfile& profile, std::uint64_t seed);
EstimatorHead build_estimator_head(const SizeProfile& profile, std::uint64_t seed);
Discriminator build_discriminator(const SizeProfile& profile, std::uint64_t seed);

// Parameter-frozen copy of a live network, used for the fake-age losses.
// Its parameters never require grad and it always runs in eval mode, so no
// gradient and no power-iteration update ever reaches it.
template <typename Holder>
class Frozen {
 public:
  explicit Frozen(Holder net);

  // Copies parameters and buffers from the live network.
  void sync(const Holder& live);
  bool is_frozen() const;

  torch::Tensor forward(const torch::Tensor& x) const { return net_->forward(x); }
  const Holder& net() const { return net_; }
  Holder& net() { return net_; }

 private:
  // Forward passes mutate nothing, but libtorch modules are not const-callable.
  mutable Holder net_;
};

using FrozenEncoder = Frozen<Encoder>;
using FrozenEstimatorHead = Frozen<EstimatorHead>;

inline constexpr std::int64_t kCheckpointVersion = 1;

// All learnable networks plus the bookkeeping stored in a checkpoint.
struct ModelBundle {
  SizeProfile profile;
  Encoder encoder{nullptr};
  EstimatorHead estimator{nullptr};
  Pat pat{nullptr};
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  bool residual_enabled = true;
  std::int64_t version = kCheckpointVersion;
  std::int64_t step = 0;
  std::int64_t epoch = 0;

  static ModelBundle build(const SizeProfile& profile, std::uint64_t seed, bool beta_enabled = true,
                           bool residual_enabled = true);

  // Parameters updated by the generator-side objective (E, C, PAT, G).
  std::vector<torch::Tensor> generator_side_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

  void train(bool on = true);
  void eval() { train(false); }
  void to(torch::Dtype dtype);

  // Throws ContractError if any parameter or buffer is non-finite.
  void check_finite() const;
};

// Copies parameters and buffers between two modules with identical structure.
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

}  // namespace aging
