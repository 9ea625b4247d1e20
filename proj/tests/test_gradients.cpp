// Analytic gradients against central finite differences, in double precision.
#include "support.hpp"

#include <functional>
#include <random>

#include "aging/age_embedding.hpp"
#include "aging/losses.hpp"

using namespace aging;

namespace {

constexpr int kProbes = 24;
constexpr double kStep = 1e-6;
constexpr double kRelTol = 1e-4;
// Absolute floor for entries whose true gradient is zero.
constexpr double kZeroFloor = 1e-9;

// Checks d f / d x at kProbes random coordinates of x.
void check_gradient(torch::Tensor x, const std::function<torch::Tensor(const torch::Tensor&)>& f, std::uint64_t seed) {
  REQUIRE((x.scalar_type() == torch::kDouble));
  x = x.detach().clone().requires_grad_(true);
  f(x).backward();
  const auto analytic = x.grad().detach().clone().flatten();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, x.numel() - 1);
  torch::NoGradGuard no_grad;
  auto flat = x.detach().flatten();
  for (int i = 0; i < kProbes; ++i) {
    const auto k = pick(rng);
    const double orig = flat[k].item<double>();
    flat[k] = orig + kStep;
    const double up = f(flat.view(x.sizes())).item<double>();
    flat[k] = orig - kStep;
    const double down = f(flat.view(x.sizes())).item<double>();
    flat[k] = orig;
    const double numeric = (up - down) / (2 * kStep);
    const double a = analytic[k].item<double>();
    const double scale = std::max(std::abs(a), std::abs(numeric));
    INFO("coordinate " << k << " analytic " << a << " numeric " << numeric);
    CHECK(std::abs(a - numeric) <= kRelTol * scale + kZeroFloor);
  }
}

}  // namespace

TEST_CASE("mean-variance loss gradient wrt logits") {
  torch::manual_seed(1);
  const LossWeights w;
  const auto targets = torch::tensor({23.0, 41.0, 57.5, 64.0}, torch::kDouble);
  check_gradient(torch::randn({4, 100}, torch::kDouble), [&](const torch::Tensor& logits) {
    return mean_variance_loss_logits(logits, targets, w);
  }, 11);
}

TEST_CASE("mean-variance loss gradient with heavier weights") {
  torch::manual_seed(2);
  LossWeights w;
  w.lambda_mv1 = 0.7;
  w.lambda_mv2 = 0.3;
  const auto targets = torch::tensor({5.0, 95.25}, torch::kDouble);
  check_gradient(torch::randn({2, 100}, torch::kDouble) * 2.0, [&](const torch::Tensor& logits) {
    return mean_variance_loss_logits(logits, targets, w);
  }, 12);
}

TEST_CASE("estimator head parameters through the real-age loss") {
  torch::manual_seed(3);
  const LossWeights w;
  auto head = build_estimator_head(testing::tiny_profile(), 5);
  head->to(torch::kDouble);
  const auto enc = torch::randn({3, 16, 8, 8}, torch::kDouble);
  const auto labels = torch::tensor({20.0, 33.0, 48.0}, torch::kDouble);
  const auto direction = head->named_parameters()["direction"].detach().clone();
  const auto gain = head->named_parameters()["gain"].detach().clone();
  check_gradient(direction, [&](const torch::Tensor& d) {
    const auto weight = gain.unsqueeze(1) * d / d.norm(2, 1, true);
    return mean_variance_loss_logits(torch::nn::functional::linear(enc.mean({2, 3}), weight), labels, w);
  }, 13);
}

TEST_CASE("identity L1 gradient") {
  torch::manual_seed(4);
  const auto target = torch::randn({2, 3, 6, 6}, torch::kDouble);
  check_gradient(torch::randn({2, 3, 6, 6}, torch::kDouble), [&](const torch::Tensor& recon) {
    return identity_l1_loss(target, recon);
  }, 14);
}

TEST_CASE("hinge discriminator gradient") {
  torch::manual_seed(5);
  const auto fake = torch::randn({2, 1, 7, 7}, torch::kDouble) * 2.0;
  check_gradient(torch::randn({2, 1, 7, 7}, torch::kDouble) * 2.0, [&](const torch::Tensor& real) {
    return hinge_d_loss(real, fake);
  }, 15);
  const auto real = torch::randn({2, 1, 7, 7}, torch::kDouble) * 2.0;
  check_gradient(torch::randn({2, 1, 7, 7}, torch::kDouble) * 2.0, [&](const torch::Tensor& f) {
    return hinge_d_loss(real, f);
  }, 16);
}

TEST_CASE("hinge generator gradient") {
  torch::manual_seed(6);
  check_gradient(torch::randn({3, 1, 5, 5}, torch::kDouble), [](const torch::Tensor& f) { return hinge_g_loss(f); },
                 17);
}

TEST_CASE("PAT gradient wrt its projections and the encoding") {
  torch::manual_seed(7);
  Pat pat(8, true);
  pat->to(torch::kDouble);
  {
    torch::NoGradGuard no_grad;
    for (auto& p : pat->parameters()) p.normal_(0.0, 0.3);
  }
  const auto enc = torch::randn({2, 8, 3, 3}, torch::kDouble);
  const auto emb = torch::randn({2, 8}, torch::kDouble);
  const auto probe = torch::randn({2, 8, 3, 3}, torch::kDouble);
  auto& gamma = pat->gamma_projection();
  auto& beta = pat->beta_projection();
  const auto gb = gamma->bias.detach().clone();
  const auto bw = beta->weight.detach().clone();
  const auto bb = beta->bias.detach().clone();
  check_gradient(gamma->weight.detach().clone(), [&](const torch::Tensor& gw) {
    const auto g = 1.0 + torch::nn::functional::linear(emb, gw, gb);
    const auto b = torch::nn::functional::linear(emb, bw, bb);
    return ((g.unsqueeze(-1).unsqueeze(-1) * enc + b.unsqueeze(-1).unsqueeze(-1)) * probe).sum();
  }, 18);
  // The module itself, differentiated wrt the embedding.
  check_gradient(emb, [&](const torch::Tensor& a) { return (pat->forward(enc, a) * probe).sum(); }, 19);
  check_gradient(enc, [&](const torch::Tensor& e) { return (pat->forward(e, emb) * probe).sum(); }, 20);
}

TEST_CASE("personalized target embedding gradient wrt the basis matrix") {
  torch::manual_seed(8);
  const auto p = torch::softmax(torch::randn({3, 100}, torch::kDouble), 1);
  const auto t = torch::tensor({22.0, 38.5, 61.25}, torch::kDouble);
  const auto probe = torch::randn({3, 12}, torch::kDouble);
  check_gradient(torch::randn({100, 12}, torch::kDouble), [&](const torch::Tensor& w) {
    return (personalized_target_embedding_batch(p, w, t) * probe).sum();
  }, 21);
  const auto w = torch::randn({100, 12}, torch::kDouble);
  check_gradient(torch::randn({3, 100}, torch::kDouble), [&](const torch::Tensor& logits) {
    return (personalized_target_embedding_batch(torch::softmax(logits, 1), w, t) * probe).sum();
  }, 22);
}
