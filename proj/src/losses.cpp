#include "aging/losses.hpp"

#include <cmath>

#include "aging/errors.hpp"

namespace aging {

void LossWeights::validate() const {
  for (double v : {lambda_mv1, lambda_mv2, lambda_fake1, lambda_fake2, lambda_age, lambda_idt, lambda_adv}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

LossWeights LossWeights::zero() { return LossWeights{0, 0, 0, 0, 0, 0, 0}; }

double LossReport::get(std::string_view key) const {
  auto it = values_.find(std::string(key));
  if (it == values_.end()) throw ContractError("loss report is missing component " + std::string(key));
  return it->second;
}

void LossReport::merge(const LossReport& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

bool LossReport::all_finite() const {
  for (const auto& [k, v] : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

MeanVarianceTerms mean_variance_terms(const torch::Tensor& logits, const torch::Tensor& targets) {
  if (logits.dim() != 2 || targets.dim() != 1 || targets.size(0) != logits.size(0)) {
    throw ContractError("mean-variance loss expects logits (N, K) and targets (N,)");
  }
  if (logits.size(0) == 0) throw ValidationError("mean-variance loss on an empty batch");
  const auto k = logits.size(1);
  const auto y = targets.detach().to(logits.scalar_type());
  if ((y < 0).any().item<bool>() || (y > static_cast<double>(k - 1)).any().item<bool>()) {
    throw ValidationError("age label outside [0, K-1]");
  }
  const auto log_p = torch::log_softmax(logits, 1);
  const auto p = log_p.exp();

  const auto lo = torch::floor(y);
  const auto frac = y - lo;
  const auto lo_idx = lo.to(torch::kLong).unsqueeze(1);
  const auto hi_idx = torch::ceil(y).to(torch::kLong).unsqueeze(1);
  const auto ce = -((1.0 - frac) * log_p.gather(1, lo_idx).squeeze(1) + frac * log_p.gather(1, hi_idx).squeeze(1));

  const auto m = distribution_mean(p);
  const auto v = distribution_variance(p);
  return MeanVarianceTerms{ce.mean(), (0.5 * (m - y).pow(2)).mean(), v.mean()};
}

torch::Tensor mean_variance_loss_logits(const torch::Tensor& logits, const torch::Tensor& targets,
                                        const LossWeights& w) {
  return mean_variance_terms(logits, targets).total(w);
}

double mean_variance_loss(const AgeDistribution& p, double target, const LossWeights& w) {
  const auto k = p.num_classes();
  if (!(target >= 0.0) || target > static_cast<double>(k - 1)) throw ValidationError("age label outside [0, K-1]");
  const auto probs = p.probs().to(torch::kDouble);
  const auto lo = static_cast<std::int64_t>(std::floor(target));
  const auto hi = static_cast<std::int64_t>(std::ceil(target));
  const double f = target - static_cast<double>(lo);
  double ce = -(1.0 - f) * std::log(probs[lo].item<double>());
  if (f > 0.0) ce -= f * std::log(probs[hi].item<double>());
  const auto stats = distribution_stats(p);
  return ce + w.lambda_mv1 * 0.5 * (stats.mean - target) * (stats.mean - target) + w.lambda_mv2 * stats.variance;
}

MeanVarianceTerms real_age_loss(const torch::Tensor& encodings, const torch::Tensor& labels, EstimatorHeadImpl& head) {
  if (encodings.dim() == 0 || encodings.size(0) == 0) throw ValidationError("real age loss on an empty batch");
  return mean_variance_terms(head.forward(encodings), labels);
}

FakeAgeTerms fake_age_loss(const torch::Tensor& transformed_encoding, const torch::Tensor& generated,
                           const torch::Tensor& targets, const FrozenEncoder& encoder,
                           const FrozenEstimatorHead& head, const LossWeights& w) {
  if (!encoder.is_frozen() || !head.is_frozen()) {
    throw ContractError("fake age loss requires parameter-frozen encoder and estimator copies");
  }
  auto enc_logits = head.forward(transformed_encoding);
  auto img_logits = head.forward(encoder.forward(generated));
  return FakeAgeTerms{mean_variance_loss_logits(enc_logits, targets, w),
                      mean_variance_loss_logits(img_logits, targets, w)};
}

torch::Tensor identity_l1_loss(const torch::Tensor& images, const torch::Tensor& reconstructed) {
  if (images.sizes() != reconstructed.sizes()) throw ContractError("identity loss: shape mismatch");
  return (reconstructed - images).abs().mean();
}

torch::Tensor hinge_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_logits) { return -fake_logits.mean(); }

torch::Tensor total_generator_loss(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& idt,
                                   const torch::Tensor& adv, const LossWeights& w) {
  return w.lambda_age * (real + fake) + w.lambda_idt * idt + w.lambda_adv * adv;
}

double total_generator_loss(const LossReport& c, const LossWeights& w) {
  const double fake = w.lambda_fake1 * c.get(LossReport::kFakeAgeEncoding) +
                      w.lambda_fake2 * c.get(LossReport::kFakeAgeImage);
  return w.lambda_age * (c.get(LossReport::kRealAge) + fake) + w.lambda_idt * c.get(LossReport::kIdentityL1) +
         w.lambda_adv * c.get(LossReport::kAdvG);
}

}  // namespace aging
