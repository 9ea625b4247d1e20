#include "support.hpp"

#include <Eigen/Dense>

#include "aging/checkpoint.hpp"
#include "aging/errors.hpp"
#include "aging/networks.hpp"

using namespace aging;

namespace {

// Output side of a k/s/p convolution, written out independently of libtorch.
std::int64_t conv_out(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) { return (n + 2 * p - k) / s + 1; }

std::int64_t patch_side_by_arithmetic(std::int64_t side, std::int64_t downsamples) {
  for (std::int64_t i = 0; i < downsamples; ++i) side = conv_out(side, 4, 2, 1);
  return conv_out(side, 4, 1, 1);
}

double largest_singular_value(const torch::Tensor& w) {
  const auto m = w.reshape({w.size(0), -1}).to(torch::kDouble).contiguous();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(
      m.data_ptr<double>(), m.size(0), m.size(1));
  return Eigen::JacobiSVD<Eigen::MatrixXd>(mat).singularValues()(0);
}

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("profiles") {
  const auto paper = SizeProfile::paper();
  CHECK(paper.image_side == 256);
  CHECK(paper.encoding_side == 64);
  CHECK(paper.encoding_channels == 256);
  CHECK(paper.num_classes == 100);
  const auto desk = SizeProfile::desk();
  CHECK(desk.encoding_side == desk.image_side / 4);
  CHECK(desk.encoding_channels == 64);
  CHECK(SizeProfile::named("desk") == desk);
  CHECK_THROWS_AS(SizeProfile::named("huge"), ConfigError);
  auto bad = desk;
  bad.encoding_side = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(build_encoder(bad, 0), ConfigError);
  CHECK_THROWS_AS(build_discriminator(bad, 0), ConfigError);
}

TEST_CASE("discriminator patch grid matches strided-conv arithmetic") {
  CHECK(patch_side_by_arithmetic(256, 4) == 15);
  CHECK(patch_side_by_arithmetic(64, 3) == 7);
  for (const auto& p : {SizeProfile::desk(), SizeProfile::paper(), testing::tiny_profile()}) {
    CHECK(p.patch_grid_side() == patch_side_by_arithmetic(p.image_side, p.discriminator_downsamples));
  }
}

TEST_CASE("desk profile shapes") {
  torch::NoGradGuard no_grad;
  const auto p = SizeProfile::desk();
  auto bundle = ModelBundle::build(p, 1);
  bundle.eval();
  const auto x = torch::rand({2, 3, 64, 64}) * 2 - 1;
  const auto e = bundle.encoder->forward(x);
  CHECK(e.sizes() == torch::IntArrayRef({2, 64, 16, 16}));
  CHECK(bundle.estimator->forward(e).sizes() == torch::IntArrayRef({2, 100}));
  const auto y = bundle.generator->forward(e);
  CHECK(y.sizes() == x.sizes());
  CHECK(bundle.discriminator->forward(x).sizes() == torch::IntArrayRef({2, 1, 7, 7}));
}

TEST_CASE("paper profile shapes") {
  torch::NoGradGuard no_grad;
  const auto p = SizeProfile::paper();
  auto encoder = build_encoder(p, 0);
  auto generator = build_generator(p, 0);
  auto head = build_estimator_head(p, 0);
  auto disc = build_discriminator(p, 0);
  encoder->eval();
  disc->eval();
  const auto x = torch::rand({1, 3, 256, 256}) * 2 - 1;
  const auto e = encoder->forward(x);
  CHECK(e.sizes() == torch::IntArrayRef({1, 256, 64, 64}));
  CHECK(head->forward(e).sizes() == torch::IntArrayRef({1, 100}));
  CHECK(generator->forward(e).sizes() == torch::IntArrayRef({1, 3, 256, 256}));
  CHECK(disc->forward(x).sizes() == torch::IntArrayRef({1, 1, 15, 15}));
}

TEST_CASE("encoder, identity PAT and generator preserve the image shape") {
  torch::NoGradGuard no_grad;
  for (const auto& p : {SizeProfile::desk(), testing::tiny_profile()}) {
    auto b = ModelBundle::build(p, 3);
    const auto x = torch::rand({3, 3, p.image_side, p.image_side}) * 2 - 1;
    const auto e = b.encoder->forward(x);
    const auto t = b.pat->forward(e, torch::randn({3, p.encoding_channels}));
    CHECK(torch::equal(t, e));
    CHECK(b.generator->forward(t).sizes() == x.sizes());
  }
}

TEST_CASE("generator output stays within [-1, 1] for wild inputs") {
  torch::NoGradGuard no_grad;
  const auto p = SizeProfile::desk();
  auto g = build_generator(p, 5);
  for (double scale : {1.0, 100.0, 1e4}) {
    const auto y = g->forward(torch::randn({2, 64, 16, 16}) * scale);
    CHECK(y.min().item<double>() >= -1.0);
    CHECK(y.max().item<double>() <= 1.0);
  }
}

TEST_CASE("construction is deterministic in the seed") {
  const auto p = SizeProfile::desk();
  CHECK(same_parameters(*build_encoder(p, 7), *build_encoder(p, 7)));
  CHECK(same_parameters(*build_generator(p, 7), *build_generator(p, 7)));
  CHECK(same_parameters(*build_discriminator(p, 7), *build_discriminator(p, 7)));
  CHECK(same_parameters(*build_estimator_head(p, 7), *build_estimator_head(p, 7)));
  CHECK_FALSE(same_parameters(*build_encoder(p, 7), *build_encoder(p, 8)));
  auto a = ModelBundle::build(p, 11);
  auto b = ModelBundle::build(p, 11);
  CHECK(same_parameters(*a.encoder, *b.encoder));
  CHECK(same_parameters(*a.discriminator, *b.discriminator));
}

TEST_CASE("spectral-normalized encoder convolutions have unit spectral norm") {
  for (const auto& p : {SizeProfile::desk(), testing::tiny_profile()}) {
    auto encoder = build_encoder(p, 2);
    const auto convs = encoder->spectral_convs();
    CHECK(convs.size() == 3 + 2 * 6);
    for (const auto& conv : convs) {
      const double s = largest_singular_value(conv->normalized_weight().detach());
      CHECK(s <= 1.0 + 1e-3);
      CHECK(s >= 0.9);
    }
  }
}

TEST_CASE("power iteration runs only in training mode") {
  auto encoder = build_encoder(SizeProfile::desk(), 4);
  const auto conv = encoder->spectral_convs().front();
  const auto before = conv->sigma().detach().clone();
  const auto x = torch::rand({1, 3, 64, 64});
  encoder->eval();
  encoder->forward(x);
  CHECK(torch::equal(conv->sigma().detach(), before));
}

TEST_CASE("estimator head: zero bias, unit directions, zero input gives zero logits") {
  auto head = build_estimator_head(SizeProfile::desk(), 9);
  CHECK(torch::equal(head->bias(), torch::zeros({100})));
  const auto logits = head->forward(torch::zeros({2, 64, 16, 16}));
  CHECK(torch::equal(logits, torch::zeros({2, 100})));
  const auto norms = head->direction().norm(2, 1);
  CHECK((norms - 1.0).abs().max().item<double>() <= 1e-5);
  CHECK(torch::equal(head->gain(), torch::ones({100})));
  CHECK(head->weight().sizes() == torch::IntArrayRef({100, 64}));
  CHECK_THROWS_AS(head->forward(torch::zeros({2, 32, 16, 16})), ContractError);
  CHECK_THROWS_AS(head->forward(torch::zeros({64, 16, 16})), ContractError);
}

TEST_CASE("estimator rows stay unit-direction after gain updates") {
  auto head = build_estimator_head(SizeProfile::desk(), 9);
  {
    torch::NoGradGuard no_grad;
    head->named_parameters()["gain"].mul_(3.0);
  }
  const auto rows = head->weight();
  const auto norms = rows.norm(2, 1);
  CHECK((norms - 3.0).abs().max().item<double>() <= 1e-5);
  CHECK(((rows / norms.unsqueeze(1)).norm(2, 1) - 1.0).abs().max().item<double>() <= 1e-5);
}

TEST_CASE("discriminator emits unbounded raw logits") {
  torch::NoGradGuard no_grad;
  auto d = build_discriminator(SizeProfile::desk(), 1);
  {
    for (auto& p : d->parameters()) p.mul_(0.0).add_(0.5);
  }
  d->eval();
  const auto out = d->forward(torch::ones({1, 3, 64, 64}) * 50.0);
  CHECK(out.abs().max().item<double>() > 1.0);
}

TEST_CASE("frozen copies") {
  const auto p = testing::tiny_profile();
  auto live = build_encoder(p, 1);
  FrozenEncoder frozen(build_encoder(p, 2));
  CHECK(frozen.is_frozen());
  frozen.sync(live);
  CHECK(same_parameters(*frozen.net(), *live));
  CHECK(frozen.is_frozen());
  frozen.net()->train();
  CHECK_FALSE(frozen.is_frozen());
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testing::scratch_dir("ckpt");
  const auto p = testing::tiny_profile();
  auto bundle = ModelBundle::build(p, 21, /*beta_enabled=*/false, /*residual_enabled=*/false);
  bundle.step = 17;
  bundle.epoch = 2;
  save_checkpoint(dir / "c.pt", bundle);
  auto loaded = load_checkpoint(dir / "c.pt", p);
  CHECK(loaded.profile == p);
  CHECK(loaded.step == 17);
  CHECK(loaded.epoch == 2);
  CHECK_FALSE(loaded.residual_enabled);
  CHECK_FALSE(loaded.pat->beta_enabled());
  CHECK(same_parameters(*loaded.encoder, *bundle.encoder));
  CHECK(same_parameters(*loaded.generator, *bundle.generator));
  CHECK(same_parameters(*loaded.discriminator, *bundle.discriminator));
  CHECK(same_parameters(*loaded.estimator, *bundle.estimator));
  CHECK_THROWS_AS(load_checkpoint(dir / "c.pt", SizeProfile::desk()), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.pt"), IoError);
  CHECK_FALSE(load_optimizer_state(dir / "c.pt", {}));
}

TEST_CASE("bundle finiteness check") {
  auto bundle = ModelBundle::build(testing::tiny_profile(), 1);
  CHECK_NOTHROW(bundle.check_finite());
  {
    torch::NoGradGuard no_grad;
    bundle.generator->parameters().front().view(-1)[0] = std::nan("");
  }
  CHECK_THROWS_AS(bundle.check_finite(), ContractError);
}
