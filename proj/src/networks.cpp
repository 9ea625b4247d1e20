#include "aging/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <string>

#include "aging/errors.hpp"

namespace F = torch::nn::functional;

namespace aging {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-12;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

torch::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

// normal(0, 0.02) for every multi-dimensional weight, zeros for biases.
void init_weights(torch::nn::Module& module, torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    if (p.dim() > 1) {
      p.normal_(0.0, kInitStd, gen);
    } else {
      p.zero_();
    }
  }
}

}  // namespace

// ---- SpectralConv2d ---------------------------------------------------------

SpectralConv2dImpl::SpectralConv2dImpl(const Options& options, torch::Generator& gen) : options_(options) {
  weight_ = register_parameter(
      "weight", torch::empty({options.out_channels, options.in_channels, options.kernel, options.kernel}));
  bias_ = register_parameter("bias", torch::zeros({options.out_channels}));
  u_ = register_buffer("u", torch::empty({options.out_channels}));
  torch::NoGradGuard no_grad;
  weight_.normal_(0.0, kInitStd, gen);
  // Start from the exact leading left singular vector; power iteration then
  // only has to track the drift caused by weight updates.
  const auto svd = torch::linalg_svd(weight_.reshape({options.out_channels, -1}), /*full_matrices=*/false);
  u_.copy_(std::get<0>(svd).select(1, 0));
}

void SpectralConv2dImpl::power_iterate(int iterations) {
  torch::NoGradGuard no_grad;
  const auto w = weight_.reshape({weight_.size(0), -1});
  for (int i = 0; i < iterations; ++i) {
    auto v = torch::mv(w.t(), u_);
    v = v / v.norm().clamp_min(kNormEps);
    auto u = torch::mv(w, v);
    u_.copy_(u / u.norm().clamp_min(kNormEps));
  }
}

torch::Tensor SpectralConv2dImpl::sigma() const {
  const auto w = weight_.reshape({weight_.size(0), -1});
  torch::Tensor u, v;
  {
    // u is cloned so later in-place power iterations cannot touch this graph.
    torch::NoGradGuard no_grad;
    u = u_.clone();
    v = torch::mv(w.t(), u);
    v = v / v.norm().clamp_min(kNormEps);
  }
  return torch::dot(u, torch::mv(w, v));
}

torch::Tensor SpectralConv2dImpl::normalized_weight() const { return weight_ / sigma(); }

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
  if (is_training()) power_iterate(1);
  const auto w = normalized_weight();
  auto opts = F::Conv2dFuncOptions().bias(bias_).stride(options_.stride);
  if (options_.reflect && options_.padding > 0) {
    const auto p = options_.padding;
    return F::conv2d(F::pad(x, F::PadFuncOptions({p, p, p, p}).mode(torch::kReflect)), w, opts);
  }
  return F::conv2d(x, w, opts.padding(options_.padding));
}

// ---- blocks -----------------------------------------------------------------

EncoderBlockImpl::EncoderBlockImpl(std::int64_t channels, torch::Generator& gen) {
  const SpectralConv2dImpl::Options opts{channels, channels, 3, 1, 1, true};
  conv1_ = register_module("conv1", SpectralConv2d(opts, gen));
  conv2_ = register_module("conv2", SpectralConv2d(opts, gen));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2_->forward(torch::relu(conv1_->forward(x)));
}

GeneratorBlockImpl::GeneratorBlockImpl(std::int64_t channels) {
  auto conv_opts = torch::nn::Conv2dOptions(channels, channels, 3).padding(1).padding_mode(torch::kReflect);
  conv1_ = register_module("conv1", torch::nn::Conv2d(conv_opts));
  conv2_ = register_module("conv2", torch::nn::Conv2d(conv_opts));
  norm1_ = register_module("norm1", torch::nn::InstanceNorm2d(channels));
  norm2_ = register_module("norm2", torch::nn::InstanceNorm2d(channels));
}

torch::Tensor GeneratorBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(norm1_->forward(conv1_->forward(x)));
  return x + norm2_->forward(conv2_->forward(h));
}

// ---- encoder ----------------------------------------------------------------

namespace {
constexpr int kEncoderBlocks = 6;
constexpr int kGeneratorBlocks = 3;
}  // namespace

EncoderImpl::EncoderImpl(const SizeProfile& profile, std::uint64_t seed) : profile_(profile) {
  profile.validate();
  auto gen = make_generator(seed);
  const auto b = profile.base_channels;
  stem_ = register_module("stem", SpectralConv2d(SpectralConv2dImpl::Options{3, b, 7, 1, 3, true}, gen));
  down1_ = register_module("down1", SpectralConv2d(SpectralConv2dImpl::Options{b, 2 * b, 3, 2, 1, false}, gen));
  down2_ = register_module("down2", SpectralConv2d(SpectralConv2dImpl::Options{2 * b, 4 * b, 3, 2, 1, false}, gen));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < kEncoderBlocks; ++i) blocks_->push_back(EncoderBlock(4 * b, gen));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images) {
  auto h = torch::relu(stem_->forward(images));
  h = torch::relu(down1_->forward(h));
  h = torch::relu(down2_->forward(h));
  for (const auto& block : *blocks_) h = block->as<EncoderBlock>()->forward(h);
  return h;
}

std::vector<SpectralConv2d> EncoderImpl::spectral_convs() const {
  std::vector<SpectralConv2d> out;
  for (const auto& m : modules(/*include_self=*/false)) {
    if (auto conv = std::dynamic_pointer_cast<SpectralConv2dImpl>(m)) out.emplace_back(conv);
  }
  return out;
}

// ---- generator --------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const SizeProfile& profile, std::uint64_t seed) : profile_(profile) {
  profile.validate();
  auto gen = make_generator(seed);
  const auto d = profile.encoding_channels;
  torch::nn::Sequential body;
  for (int i = 0; i < kGeneratorBlocks; ++i) body->push_back(GeneratorBlock(d));
  for (std::int64_t c = d; c > profile.base_channels; c /= 2) {
    body->push_back(
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(c, c / 2, 3).stride(2).padding(1).output_padding(1)));
    body->push_back(torch::nn::InstanceNorm2d(c / 2));
    body->push_back(torch::nn::ReLU());
  }
  body->push_back(torch::nn::ReflectionPad2d(3));
  body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(profile.base_channels, 3, 7)));
  body->push_back(torch::nn::Tanh());
  body_ = register_module("body", body);
  init_weights(*body_, gen);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& encoding) { return body_->forward(encoding); }

// ---- estimator head ---------------------------------------------------------

EstimatorHeadImpl::EstimatorHeadImpl(const SizeProfile& profile, std::uint64_t seed) : profile_(profile) {
  profile.validate();
  auto gen = make_generator(seed);
  direction_ = register_parameter("direction", torch::empty({profile.num_classes, profile.encoding_channels}));
  gain_ = register_parameter("gain", torch::ones({profile.num_classes}));
  torch::NoGradGuard no_grad;
  direction_.normal_(0.0, kInitStd, gen);
}

torch::Tensor EstimatorHeadImpl::direction() const {
  return direction_ / direction_.norm(2, /*dim=*/1, /*keepdim=*/true).clamp_min(kNormEps);
}

torch::Tensor EstimatorHeadImpl::weight() const { return gain_.unsqueeze(1) * direction(); }

torch::Tensor EstimatorHeadImpl::bias() const { return torch::zeros({profile_.num_classes}, gain_.options()); }

torch::Tensor EstimatorHeadImpl::forward(const torch::Tensor& encoding) {
  if (encoding.dim() != 4 || encoding.size(1) != profile_.encoding_channels) {
    throw ContractError("estimator head expects (N, " + std::to_string(profile_.encoding_channels) +
                        ", H, W) encodings");
  }
  return F::linear(encoding.mean({2, 3}), weight());
}

// ---- discriminator ----------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const SizeProfile& profile, std::uint64_t seed) : profile_(profile) {
  profile.validate();
  auto gen = make_generator(seed);
  convs_ = register_module("convs", torch::nn::ModuleList());
  const auto b = profile.base_channels;
  std::int64_t in = 3;
  for (std::int64_t i = 0; i < profile.discriminator_downsamples; ++i) {
    const std::int64_t out = b * std::min<std::int64_t>(std::int64_t{1} << i, 8);
    convs_->push_back(SpectralConv2d(SpectralConv2dImpl::Options{in, out, 4, 2, 1, false}, gen));
    in = out;
  }
  convs_->push_back(SpectralConv2d(SpectralConv2dImpl::Options{in, 1, 4, 1, 1, false}, gen));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto h = images;
  const auto n = convs_->size();
  for (std::size_t i = 0; i < n; ++i) {
    h = convs_[i]->as<SpectralConv2d>()->forward(h);
    if (i + 1 < n) h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return h;
}

// ---- builders ---------------------------------------------------------------

Encoder build_encoder(const SizeProfile& profile, std::uint64_t seed) { return Encoder(profile, seed); }
Generator build_generator(const SizeProfile& profile, std::uint64_t seed) { return Generator(profile, seed); }
EstimatorHead build_estimator_head(const SizeProfile& profile, std::uint64_t seed) {
  return EstimatorHead(profile, seed);
}
Discriminator build_discriminator(const SizeProfile& profile, std::uint64_t seed) {
  return Discriminator(profile, seed);
}

// ---- frozen copies ----------------------------------------------------------

template <typename Holder>
Frozen<Holder>::Frozen(Holder net) : net_(std::move(net)) {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

template <typename Holder>
void Frozen<Holder>::sync(const Holder& live) {
  copy_state(*live, *net_);
}

template <typename Holder>
bool Frozen<Holder>::is_frozen() const {
  if (net_->is_training()) return false;
  for (const auto& p : net_->parameters()) {
    if (p.requires_grad()) return false;
  }
  return true;
}

template class Frozen<Encoder>;
template class Frozen<EstimatorHead>;

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  auto dst_params = dst.named_parameters(true);
  for (const auto& item : src.named_parameters(true)) {
    auto* target = dst_params.find(item.key());
    if (target == nullptr) throw ContractError("copy_state: missing parameter " + item.key());
    target->copy_(item.value());
  }
  auto dst_buffers = dst.named_buffers(true);
  for (const auto& item : src.named_buffers(true)) {
    auto* target = dst_buffers.find(item.key());
    if (target == nullptr) throw ContractError("copy_state: missing buffer " + item.key());
    target->copy_(item.value());
  }
}

// ---- bundle -----------------------------------------------------------------

ModelBundle ModelBundle::build(const SizeProfile& profile, std::uint64_t seed, bool beta_enabled,
                               bool residual_enabled) {
  profile.validate();
  ModelBundle b;
  b.profile = profile;
  b.encoder = build_encoder(profile, mix_seed(seed, 0));
  b.estimator = build_estimator_head(profile, mix_seed(seed, 1));
  b.pat = Pat(profile.encoding_channels, beta_enabled);
  b.generator = build_generator(profile, mix_seed(seed, 2));
  b.discriminator = build_discriminator(profile, mix_seed(seed, 3));
  b.residual_enabled = residual_enabled;
  return b;
}

std::vector<torch::Tensor> ModelBundle::generator_side_parameters() const {
  std::vector<torch::Tensor> params;
  for (const torch::nn::Module* m : std::initializer_list<const torch::nn::Module*>{
           encoder.get(), estimator.get(), pat.get(), generator.get()}) {
    auto ps = m->parameters();
    params.insert(params.end(), ps.begin(), ps.end());
  }
  return params;
}

std::vector<torch::Tensor> ModelBundle::discriminator_parameters() const { return discriminator->parameters(); }

void ModelBundle::train(bool on) {
  encoder->train(on);
  estimator->train(on);
  pat->train(on);
  generator->train(on);
  discriminator->train(on);
}

void ModelBundle::to(torch::Dtype dtype) {
  encoder->to(dtype);
  estimator->to(dtype);
  pat->to(dtype);
  generator->to(dtype);
  discriminator->to(dtype);
}

void ModelBundle::check_finite() const {
  for (const torch::nn::Module* m : std::initializer_list<const torch::nn::Module*>{
           encoder.get(), estimator.get(), pat.get(), generator.get(), discriminator.get()}) {
    for (const auto& p : m->named_parameters(true)) {
      if (!torch::isfinite(p.value()).all().item<bool>()) {
        throw ContractError("non-finite parameter " + p.key());
      }
    }
    for (const auto& p : m->named_buffers(true)) {
      if (!torch::isfinite(p.value()).all().item<bool>()) {
        throw ContractError("non-finite buffer " + p.key());
      }
    }
  }
}

}  // namespace aging
