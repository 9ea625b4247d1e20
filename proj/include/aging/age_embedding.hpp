#pragma once

// Age distributions, aging bases taken from the estimator weights, personalized
// residual target embeddings and the PAT feature modulation.
//
// Two API layers live here. The value types (AgeDistribution, TargetAge, ...)
// validate their invariants and serve single-sample callers such as inference.
// The batched tensor functions are differentiable and are what training uses.

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace aging {

class EstimatorHeadImpl;

// Probability vector over K integer ages. Entries >= 0 and sum to 1 within 1e-6.
class AgeDistribution {
 public:
  static constexpr double kSumTolerance = 1e-6;

  explicit AgeDistribution(torch::Tensor p);

  const torch::Tensor& probs() const { return p_; }
  std::int64_t num_classes() const { return p_.size(0); }

 private:
  torch::Tensor p_;
};

struct AgeDistributionStats {
  double mean = 0.0;
  double variance = 0.0;
  std::int64_t rounded_age = 0;
};

// K x D matrix whose row j is the aging basis a_j.
class AgingBasisMatrix {
 public:
  explicit AgingBasisMatrix(torch::Tensor weights);

  const torch::Tensor& weights() const { return w_; }
  std::int64_t num_classes() const { return w_.size(0); }
  std::int64_t dim() const { return w_.size(1); }

 private:
  torch::Tensor w_;
};

// Target age in [0, K-1]; fractional values allowed.
class TargetAge {
 public:
  TargetAge(double value, std::int64_t num_classes);
  double value() const { return value_; }

 private:
  double value_;
};

// D-vector. Always owns its storage; never aliases a basis matrix.
class PersonalizedAgeEmbedding {
 public:
  explicit PersonalizedAgeEmbedding(torch::Tensor values);
  const torch::Tensor& values() const { return v_; }
  std::int64_t dim() const { return v_.size(0); }

 private:
  torch::Tensor v_;
};

// Inclusive integer age range used to build an interpolation anchor.
struct AgeGroup {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  double center() const { return 0.5 * static_cast<double>(lo + hi); }
};

// Learnable PAT projections. gamma(a) = 1 + A_g a + b_g and beta(a) = A_b a + b_b,
// both zero-initialized so a fresh module is the identity modulation.
class PatImpl : public torch::nn::Module {
 public:
  PatImpl(std::int64_t dim, bool beta_enabled);

  // (N, D) -> (N, D)
  torch::Tensor gamma(const torch::Tensor& embedding);
  torch::Tensor beta(const torch::Tensor& embedding);
  // encoding (N, D, H, W), embedding (N, D).
  torch::Tensor forward(const torch::Tensor& encoding, const torch::Tensor& embedding);

  bool beta_enabled() const { return beta_enabled_; }
  std::int64_t dim() const { return dim_; }
  torch::nn::Linear& gamma_projection() { return gamma_; }
  torch::nn::Linear& beta_projection() { return beta_; }

 private:
  std::int64_t dim_;
  bool beta_enabled_;
  torch::nn::Linear gamma_{nullptr};
  torch::nn::Linear beta_{nullptr};
};
TORCH_MODULE(Pat);

// ---- value-typed operations -------------------------------------------------

// Softmax of the head's logits for a single (D, H, W) encoding.
AgeDistribution estimate_distribution(const torch::Tensor& encoding, EstimatorHeadImpl& head);
AgeDistributionStats distribution_stats(const AgeDistribution& p);
PersonalizedAgeEmbedding aging_basis(const AgingBasisMatrix& w, std::int64_t j);
PersonalizedAgeEmbedding fractional_basis(const AgingBasisMatrix& w, TargetAge t);
PersonalizedAgeEmbedding personalized_target_embedding(const AgeDistribution& p, const AgingBasisMatrix& w,
                                                       TargetAge t);
// Single encoding (D, H, W) or batch (N, D, H, W) sharing one embedding.
torch::Tensor apply_pat(const torch::Tensor& encoding, const PersonalizedAgeEmbedding& embedding, PatImpl& pat);

// Throws ValidationError unless the groups are sorted, contiguous and inside [0, K-1].
void validate_anchor_groups(std::span<const AgeGroup> groups, std::int64_t num_classes);
PersonalizedAgeEmbedding anchor_interpolation_embedding(const AgingBasisMatrix& w, std::span<const AgeGroup> groups,
                                                        TargetAge t);

// ---- batched, differentiable ------------------------------------------------

// (N, D, H, W) -> (N, K) probabilities.
torch::Tensor estimate_distribution_batch(const torch::Tensor& encodings, EstimatorHeadImpl& head);
// Sum_j j p_j for each row of (N, K).
torch::Tensor distribution_mean(const torch::Tensor& p);
torch::Tensor distribution_variance(const torch::Tensor& p);
// floor(m + 0.5) as int64.
torch::Tensor round_half_up(const torch::Tensor& m);
// (1-f) a_floor(t) + f a_ceil(t) for each t in (N,), result (N, D).
torch::Tensor fractional_basis_batch(const torch::Tensor& w, const torch::Tensor& t);
// Sum_j p_j a_j - a_[m] for each row of p.
torch::Tensor residual_embedding_batch(const torch::Tensor& p, const torch::Tensor& w);
// residual + fractional basis at t; with residual == false only the basis.
torch::Tensor personalized_target_embedding_batch(const torch::Tensor& p, const torch::Tensor& w,
                                                  const torch::Tensor& t, bool residual = true);
// Anchor-interpolated bases (N, D) for targets t (N,).
torch::Tensor anchor_interpolation_batch(const torch::Tensor& w, std::span<const AgeGroup> groups,
                                         const torch::Tensor& t);

}  // namespace aging
