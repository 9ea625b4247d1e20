#pragma once

#include <map>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "aging/age_embedding.hpp"
#include "aging/networks.hpp"

namespace aging {

struct LossWeights {
  double lambda_mv1 = 0.05;
  double lambda_mv2 = 0.005;
  double lambda_fake1 = 0.4;
  double lambda_fake2 = 1.0;
  double lambda_age = 0.05;
  double lambda_idt = 1.0;
  double lambda_adv = 1.0;

  void validate() const;
  static LossWeights zero();
};

// Flat record of named loss scalars, one per training step.
class LossReport {
 public:
  static constexpr std::string_view kSoftmaxTerm = "softmax_term";
  static constexpr std::string_view kMeanTerm = "mean_term";
  static constexpr std::string_view kVarianceTerm = "variance_term";
  static constexpr std::string_view kRealAge = "real_age";
  static constexpr std::string_view kFakeAgeEncoding = "fake_age_encoding";
  static constexpr std::string_view kFakeAgeImage = "fake_age_image";
  static constexpr std::string_view kIdentityL1 = "identity_l1";
  static constexpr std::string_view kAdvG = "adv_g";
  static constexpr std::string_view kAdvD = "adv_d";
  static constexpr std::string_view kTotalG = "total_g";
  static constexpr std::string_view kTotalD = "total_d";

  void set(std::string_view key, double value) { values_[std::string(key)] = value; }
  bool has(std::string_view key) const { return values_.count(std::string(key)) != 0; }
  // Throws ContractError when the component is missing.
  double get(std::string_view key) const;
  void merge(const LossReport& other);
  bool all_finite() const;

  const std::map<std::string, double>& values() const { return values_; }
  friend bool operator==(const LossReport&, const LossReport&) = default;

 private:
  std::map<std::string, double> values_;
};

// Batch-mean components of the mean-variance loss.
//   softmax = -log p_y (two-point split for fractional y)
//   mean    = (m - y)^2 / 2
//   variance = v
struct MeanVarianceTerms {
  torch::Tensor softmax;
  torch::Tensor mean;
  torch::Tensor variance;

  torch::Tensor total(const LossWeights& w) const { return softmax + w.lambda_mv1 * mean + w.lambda_mv2 * variance; }
};

// logits (N, K), targets (N,) real ages in [0, K-1].
MeanVarianceTerms mean_variance_terms(const torch::Tensor& logits, const torch::Tensor& targets);
torch::Tensor mean_variance_loss_logits(const torch::Tensor& logits, const torch::Tensor& targets,
                                        const LossWeights& w);
// Single distribution; -log p_y is taken on the probabilities directly.
double mean_variance_loss(const AgeDistribution& p, double target, const LossWeights& w);

// Batch mean of the mean-variance loss of C(encodings) against integer labels.
MeanVarianceTerms real_age_loss(const torch::Tensor& encodings, const torch::Tensor& labels, EstimatorHeadImpl& head);

struct FakeAgeTerms {
  torch::Tensor encoding_level;  // L_mv(C^(PAT(E(x), t)), t)
  torch::Tensor image_level;     // L_mv(C^(E^(G(PAT(E(x), t)))), t)

  torch::Tensor total(const LossWeights& w) const {
    return w.lambda_fake1 * encoding_level + w.lambda_fake2 * image_level;
  }
};

// Estimates through parameter-frozen copies; throws ContractError if either copy
// is not frozen. Gradients flow back into the inputs only.
FakeAgeTerms fake_age_loss(const torch::Tensor& transformed_encoding, const torch::Tensor& generated,
                           const torch::Tensor& targets, const FrozenEncoder& encoder,
                           const FrozenEstimatorHead& head, const LossWeights& w);

torch::Tensor identity_l1_loss(const torch::Tensor& images, const torch::Tensor& reconstructed);
torch::Tensor hinge_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor hinge_g_loss(const torch::Tensor& fake_logits);

// lambda_age (real + fake) + lambda_idt idt + lambda_adv adv.
torch::Tensor total_generator_loss(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& idt,
                                   const torch::Tensor& adv, const LossWeights& w);
// Same combination over a report; fake = lambda_fake1 * enc + lambda_fake2 * img.
double total_generator_loss(const LossReport& components, const LossWeights& w);

}  // namespace aging
