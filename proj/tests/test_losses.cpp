#include "support.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "aging/errors.hpp"
#include "aging/losses.hpp"

using namespace aging;

namespace {

torch::Tensor dvec(std::initializer_list<double> v) { return torch::tensor(std::vector<double>(v), torch::kDouble); }

double scalar(const torch::Tensor& t) { return t.item<double>(); }

// Logits whose softmax is `p` (up to a constant shift).
torch::Tensor logits_for(const torch::Tensor& p) { return p.log().unsqueeze(0); }

// Independent scalar evaluation of the mean-variance loss at an integer target.
double mv_reference(const std::vector<double>& p, int y, double l1, double l2) {
  double m = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) m += static_cast<double>(j) * p[j];
  double v = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) v += p[j] * (static_cast<double>(j) - m) * (static_cast<double>(j) - m);
  return -std::log(p[static_cast<std::size_t>(y)]) + 0.5 * l1 * (m - y) * (m - y) + l2 * v;
}

}  // namespace

TEST_CASE("loss weight defaults") {
  const LossWeights w;
  CHECK(w.lambda_mv1 == 0.05);
  CHECK(w.lambda_mv2 == 0.005);
  CHECK(w.lambda_fake1 == 0.4);
  CHECK(w.lambda_fake2 == 1.0);
  CHECK(w.lambda_age == 0.05);
  CHECK(w.lambda_idt == 1.0);
  CHECK(w.lambda_adv == 1.0);
  CHECK_NOTHROW(w.validate());
  auto bad = w;
  bad.lambda_idt = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mean_variance_loss") {
  const LossWeights w;
  SUBCASE("one-hot at integer y is zero") {
    auto p = torch::zeros({100}, torch::kDouble);
    p[31] = 1.0;
    CHECK(mean_variance_loss(AgeDistribution(p), 31.0, w) == 0.0);
  }
  SUBCASE("K=3 worked example") {
    const double reference = mv_reference({0.2, 0.5, 0.3}, 1, 0.05, 0.005);
    CHECK(reference == doctest::Approx(0.695847).epsilon(1e-6));
    CHECK(mean_variance_loss(AgeDistribution(dvec({0.2, 0.5, 0.3})), 1.0, w) ==
          doctest::Approx(reference).epsilon(1e-12));
    const auto logits = logits_for(dvec({0.2, 0.5, 0.3}));
    CHECK(scalar(mean_variance_loss_logits(logits, dvec({1.0}), w)) == doctest::Approx(reference).epsilon(1e-12));
    const auto terms = mean_variance_terms(logits, dvec({1.0}));
    CHECK(scalar(terms.softmax) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(scalar(terms.mean) == doctest::Approx(0.005).epsilon(1e-9));
    CHECK(scalar(terms.variance) == doctest::Approx(0.49).epsilon(1e-12));
  }
  SUBCASE("fractional target splits the cross-entropy over neighbours") {
    const auto p = dvec({0.2, 0.5, 0.3});
    const double y = 1.25;
    const double m = 1.1;
    const double expected = -(0.75 * std::log(0.5) + 0.25 * std::log(0.3)) + 0.05 * 0.5 * (m - y) * (m - y) +
                            0.005 * 0.49;
    CHECK(mean_variance_loss(AgeDistribution(p), y, w) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(scalar(mean_variance_loss_logits(logits_for(p), dvec({y}), w)) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(mean_variance_loss(AgeDistribution(dvec({0.5, 0.5})), 1.5, w), ValidationError);
    CHECK_THROWS_AS(mean_variance_loss(AgeDistribution(dvec({0.5, 0.5})), -0.5, w), ValidationError);
    CHECK_THROWS_AS(mean_variance_loss_logits(torch::zeros({1, 3}), dvec({3.0}), w), ValidationError);
    CHECK_THROWS_AS(mean_variance_loss_logits(torch::zeros({0, 3}), torch::zeros({0}), w), ValidationError);
    CHECK_THROWS_AS(mean_variance_loss_logits(torch::zeros({2, 3}), dvec({1.0}), w), ContractError);
  }
  SUBCASE("nonnegative at integer targets, zero only for one-hot") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> age(0, 99);
    for (int i = 0; i < 50; ++i) {
      const auto logits = torch::randn({1, 100}, torch::kDouble) * 3.0;
      const auto y = static_cast<double>(age(rng));
      CHECK(scalar(mean_variance_loss_logits(logits, dvec({y}), w)) > 0.0);
    }
  }
}

TEST_CASE("real_age_loss") {
  const LossWeights w;
  auto head = build_estimator_head(testing::tiny_profile(), 4);
  head->to(torch::kDouble);
  const auto e = torch::randn({2, 16, 8, 8}, torch::kDouble);
  const auto a = real_age_loss(e.slice(0, 0, 1), dvec({30.0}), *head).total(w);
  const auto b = real_age_loss(e.slice(0, 1, 2), dvec({45.0}), *head).total(w);
  SUBCASE("two samples average their individual losses") {
    const auto both = real_age_loss(e, dvec({30.0, 45.0}), *head).total(w);
    CHECK(scalar(both) == doctest::Approx((scalar(a) + scalar(b)) / 2).epsilon(1e-12));
  }
  SUBCASE("duplicated sample") {
    const auto dup = torch::cat({e.slice(0, 0, 1), e.slice(0, 0, 1), e.slice(0, 0, 1)});
    CHECK(scalar(real_age_loss(dup, dvec({30.0, 30.0, 30.0}), *head).total(w)) ==
          doctest::Approx(scalar(a)).epsilon(1e-12));
  }
  SUBCASE("one-hot-producing logits give zero") {
    auto profile = testing::tiny_profile();
    auto peaked = build_estimator_head(profile, 0);
    peaked->to(torch::kDouble);
    {
      torch::NoGradGuard no_grad;
      auto params = peaked->named_parameters();
      params["direction"].zero_();
      params["direction"].select(1, 0).fill_(-1.0);
      params["direction"][30][0] = 1.0;
      params["gain"].fill_(1e4);
    }
    auto enc = torch::zeros({1, 16, 8, 8}, torch::kDouble);
    enc.select(1, 0).fill_(1.0);
    CHECK(scalar(real_age_loss(enc, dvec({30.0}), *peaked).total(w)) == 0.0);
  }
  SUBCASE("gradients reach the head") {
    auto loss = real_age_loss(e, dvec({30.0, 45.0}), *head).total(w);
    loss.backward();
    CHECK(head->named_parameters()["direction"].grad().abs().sum().item<double>() > 0.0);
  }
  SUBCASE("empty batch") {
    CHECK_THROWS_AS(real_age_loss(torch::zeros({0, 16, 8, 8}, torch::kDouble), torch::zeros({0}), *head),
                    ValidationError);
  }
}

TEST_CASE("fake_age_loss") {
  const LossWeights w;
  SUBCASE("weighted sum of the inner losses") {
    CHECK(scalar(FakeAgeTerms{dvec({0.5}).sum(), dvec({0.2}).sum()}.total(w)) == doctest::Approx(0.4));
    CHECK(scalar(FakeAgeTerms{dvec({0.0}).sum(), dvec({0.0}).sum()}.total(w)) == 0.0);
  }
  const auto p = testing::tiny_profile();
  auto live_encoder = build_encoder(p, 1);
  auto live_head = build_estimator_head(p, 2);
  FrozenEncoder frozen_encoder(build_encoder(p, 1));
  FrozenEstimatorHead frozen_head(build_estimator_head(p, 2));
  frozen_encoder.sync(live_encoder);
  frozen_head.sync(live_head);
  auto generator = build_generator(p, 3);

  SUBCASE("matches the weighted inner losses") {
    const auto e = torch::randn({2, 16, 8, 8});
    const auto g = generator->forward(e);
    const auto t = torch::tensor({25.0f, 52.5f});
    const auto terms = fake_age_loss(e, g, t, frozen_encoder, frozen_head, w);
    torch::NoGradGuard no_grad;
    const auto enc = scalar(mean_variance_loss_logits(live_head->forward(e), t, w));
    live_encoder->eval();
    const auto img = scalar(mean_variance_loss_logits(live_head->forward(live_encoder->forward(g)), t, w));
    CHECK(scalar(terms.encoding_level) == doctest::Approx(enc).epsilon(1e-5));
    CHECK(scalar(terms.image_level) == doctest::Approx(img).epsilon(1e-5));
    CHECK(scalar(terms.total(w)) == doctest::Approx(0.4 * enc + img).epsilon(1e-5));
  }
  SUBCASE("frozen copies receive exactly zero gradient; activations carry it") {
    const auto e = torch::randn({2, 16, 8, 8}, torch::requires_grad());
    const auto g = generator->forward(e);
    const auto terms = fake_age_loss(e, g, torch::tensor({30.0f, 40.0f}), frozen_encoder, frozen_head, w);
    terms.total(w).backward();
    for (const auto& param : frozen_encoder.net()->parameters()) {
      CHECK_FALSE(param.requires_grad());
      CHECK((!param.grad().defined() || param.grad().abs().sum().item<double>() == 0.0));
    }
    for (const auto& param : frozen_head.net()->parameters()) {
      CHECK((!param.grad().defined() || param.grad().abs().sum().item<double>() == 0.0));
    }
    CHECK(e.grad().abs().sum().item<double>() > 0.0);
    bool generator_has_grad = false;
    for (const auto& param : generator->parameters()) {
      if (param.grad().defined() && param.grad().abs().sum().item<double>() > 0.0) generator_has_grad = true;
    }
    CHECK(generator_has_grad);
  }
  SUBCASE("unfrozen copies are rejected") {
    frozen_head.net()->train();
    const auto e = torch::randn({1, 16, 8, 8});
    CHECK_THROWS_AS(fake_age_loss(e, generator->forward(e), torch::tensor({30.0f}), frozen_encoder, frozen_head, w),
                    ContractError);
  }
}

TEST_CASE("identity_l1_loss") {
  const auto x = torch::randn({2, 3, 4, 4});
  CHECK(scalar(identity_l1_loss(x, x)) == 0.0);
  CHECK(scalar(identity_l1_loss(torch::ones({2, 3, 4, 4}), -torch::ones({2, 3, 4, 4}))) == 2.0);
  const auto a = torch::zeros({1, 1, 2, 2}, torch::kDouble);
  const auto b = dvec({0.1, -0.2, 0.3, -0.4}).reshape({1, 1, 2, 2});
  CHECK(scalar(identity_l1_loss(a, b)) == doctest::Approx((0.1 + 0.2 + 0.3 + 0.4) / 4).epsilon(1e-12));
  CHECK_THROWS_AS(identity_l1_loss(torch::zeros({1, 3, 4, 4}), torch::zeros({1, 3, 4, 5})), ContractError);
}

TEST_CASE("hinge losses") {
  CHECK(scalar(hinge_d_loss(dvec({1.0, 3.0}), dvec({-1.0, -7.0}))) == 0.0);
  CHECK(scalar(hinge_d_loss(torch::zeros({1, 1, 7, 7}), torch::zeros({1, 1, 7, 7}))) == 2.0);
  CHECK(scalar(hinge_d_loss(dvec({2.0, 0.5}), dvec({-0.5}))) == doctest::Approx(0.75));
  CHECK(scalar(hinge_g_loss(torch::zeros({2, 1, 3, 3}))) == 0.0);
  CHECK(scalar(hinge_g_loss(torch::full({2, 1, 3, 3}, 3.0))) == -3.0);
  CHECK(scalar(hinge_g_loss(dvec({1.0, -2.0, 4.0}))) == doctest::Approx(-1.0));
  CHECK(scalar(hinge_g_loss(torch::full({4}, 1e6))) == -1e6);
  for (int i = 0; i < 100; ++i) {
    CHECK(scalar(hinge_d_loss(torch::randn({9}) * 5, torch::randn({9}) * 5)) >= 0.0);
  }
}

TEST_CASE("total_generator_loss") {
  const LossWeights w;
  const auto s = [](double v) { return torch::tensor(v, torch::kDouble); };
  CHECK(scalar(total_generator_loss(s(0), s(0), s(0), s(0), w)) == 0.0);
  CHECK(scalar(total_generator_loss(s(1.5), s(0.5), s(0.3), s(-0.5), w)) == doctest::Approx(-0.1));

  LossReport r;
  r.set(LossReport::kRealAge, 1.0);
  r.set(LossReport::kFakeAgeEncoding, 1.25);
  r.set(LossReport::kFakeAgeImage, 0.5);
  r.set(LossReport::kIdentityL1, 0.3);
  CHECK_THROWS_AS(total_generator_loss(r, w), ContractError);
  r.set(LossReport::kAdvG, -0.5);
  // 0.05 * (1 + 0.4 * 1.25 + 0.5) + 0.3 - 0.5
  CHECK(total_generator_loss(r, w) == doctest::Approx(-0.1));

  auto doubled = w;
  doubled.lambda_idt = 2.0;
  CHECK(total_generator_loss(r, doubled) - total_generator_loss(r, w) == doctest::Approx(0.3));

  SUBCASE("affine in each component") {
    const std::vector<std::string_view> keys = {LossReport::kRealAge, LossReport::kFakeAgeEncoding,
                                                LossReport::kFakeAgeImage, LossReport::kIdentityL1,
                                                LossReport::kAdvG};
    const std::vector<double> slopes = {0.05, 0.05 * 0.4, 0.05, 1.0, 1.0};
    for (std::size_t i = 0; i < keys.size(); ++i) {
      auto bumped = r;
      bumped.set(keys[i], r.get(keys[i]) + 2.0);
      CHECK(total_generator_loss(bumped, w) - total_generator_loss(r, w) == doctest::Approx(2.0 * slopes[i]));
    }
  }
}

TEST_CASE("loss report") {
  LossReport r;
  r.set(LossReport::kAdvD, 1.0);
  CHECK(r.all_finite());
  CHECK_THROWS_AS(r.get(LossReport::kTotalG), ContractError);
  LossReport other;
  other.set(LossReport::kTotalD, std::nan(""));
  r.merge(other);
  CHECK(r.has(LossReport::kTotalD));
  CHECK_FALSE(r.all_finite());
}
