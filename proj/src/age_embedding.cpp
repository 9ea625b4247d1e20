#include "aging/age_embedding.hpp"

#include <cmath>
#include <sstream>

#include "aging/errors.hpp"
#include "aging/networks.hpp"

namespace aging {
namespace {

torch::Tensor class_indices(std::int64_t k, const torch::TensorOptions& opts) { return torch::arange(k, opts); }

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) throw ValidationError(std::string(what) + " contains non-finite values");
}

}  // namespace

// ---- value types ------------------------------------------------------------

AgeDistribution::AgeDistribution(torch::Tensor p) : p_(std::move(p)) {
  if (p_.dim() != 1 || p_.size(0) < 1) throw ValidationError("age distribution must be a non-empty vector");
  require_finite(p_, "age distribution");
  if ((p_ < 0).any().item<bool>()) throw ValidationError("age distribution has negative entries");
  const double sum = p_.sum().item<double>();
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream msg;
    msg << "age distribution sums to " << sum << ", expected 1";
    throw ValidationError(msg.str());
  }
}

AgingBasisMatrix::AgingBasisMatrix(torch::Tensor weights) : w_(std::move(weights)) {
  if (w_.dim() != 2) throw ValidationError("aging basis matrix must be K x D");
  require_finite(w_, "aging basis matrix");
}

TargetAge::TargetAge(double value, std::int64_t num_classes) : value_(value) {
  if (!std::isfinite(value) || value < 0.0 || value > static_cast<double>(num_classes - 1)) {
    std::ostringstream msg;
    msg << "target age " << value << " outside [0, " << num_classes - 1 << "]";
    throw ValidationError(msg.str());
  }
}

PersonalizedAgeEmbedding::PersonalizedAgeEmbedding(torch::Tensor values) : v_(std::move(values)) {
  if (v_.dim() != 1) throw ValidationError("age embedding must be a vector");
  require_finite(v_, "age embedding");
}

// ---- PAT --------------------------------------------------------------------

PatImpl::PatImpl(std::int64_t dim, bool beta_enabled) : dim_(dim), beta_enabled_(beta_enabled) {
  gamma_ = register_module("gamma", torch::nn::Linear(dim, dim));
  beta_ = register_module("beta", torch::nn::Linear(dim, dim));
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) p.zero_();
}

torch::Tensor PatImpl::gamma(const torch::Tensor& embedding) { return 1.0 + gamma_->forward(embedding); }

torch::Tensor PatImpl::beta(const torch::Tensor& embedding) {
  if (!beta_enabled_) return torch::zeros_like(embedding);
  return beta_->forward(embedding);
}

torch::Tensor PatImpl::forward(const torch::Tensor& encoding, const torch::Tensor& embedding) {
  if (encoding.dim() != 4 || embedding.dim() != 2 || encoding.size(1) != dim_ || embedding.size(1) != dim_ ||
      (embedding.size(0) != encoding.size(0) && embedding.size(0) != 1)) {
    throw ContractError("PAT expects encoding (N, D, H, W) and embedding (N, D) with matching D");
  }
  auto out = gamma(embedding).unsqueeze(-1).unsqueeze(-1) * encoding;
  if (beta_enabled_) out = out + beta(embedding).unsqueeze(-1).unsqueeze(-1);
  return out;
}

// ---- batched ----------------------------------------------------------------

torch::Tensor estimate_distribution_batch(const torch::Tensor& encodings, EstimatorHeadImpl& head) {
  return torch::softmax(head.forward(encodings), /*dim=*/1);
}

torch::Tensor distribution_mean(const torch::Tensor& p) {
  return (p * class_indices(p.size(1), p.options())).sum(1);
}

torch::Tensor distribution_variance(const torch::Tensor& p) {
  const auto j = class_indices(p.size(1), p.options());
  const auto m = distribution_mean(p).unsqueeze(1);
  return (p * (j - m).pow(2)).sum(1);
}

torch::Tensor round_half_up(const torch::Tensor& m) { return torch::floor(m.detach() + 0.5).to(torch::kLong); }

torch::Tensor fractional_basis_batch(const torch::Tensor& w, const torch::Tensor& t) {
  const auto k = w.size(0);
  const auto td = t.detach().to(w.scalar_type());
  if ((td < 0).any().item<bool>() || (td > static_cast<double>(k - 1)).any().item<bool>()) {
    throw ValidationError("target age outside [0, K-1]");
  }
  const auto lo = torch::floor(td);
  const auto frac = (td - lo).unsqueeze(1);
  const auto lo_idx = lo.to(torch::kLong);
  const auto hi_idx = torch::ceil(td).to(torch::kLong);
  // Integral t: lo == hi and frac == 0, so the row comes back exactly.
  return (1.0 - frac) * w.index_select(0, lo_idx) + frac * w.index_select(0, hi_idx);
}

torch::Tensor residual_embedding_batch(const torch::Tensor& p, const torch::Tensor& w) {
  if (p.dim() != 2 || p.size(1) != w.size(0)) throw ContractError("distribution and basis matrix disagree on K");
  const auto personalized = torch::matmul(p, w);
  const auto current = w.index_select(0, round_half_up(distribution_mean(p)));
  return personalized - current;
}

torch::Tensor personalized_target_embedding_batch(const torch::Tensor& p, const torch::Tensor& w,
                                                  const torch::Tensor& t, bool residual) {
  const auto target = fractional_basis_batch(w, t);
  if (!residual) return target;
  return residual_embedding_batch(p, w) + target;
}

void validate_anchor_groups(std::span<const AgeGroup> groups, std::int64_t num_classes) {
  if (groups.empty()) throw ValidationError("anchor interpolation needs at least one age group");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (g.lo > g.hi || g.lo < 0 || g.hi > num_classes - 1) {
      throw ValidationError("age group " + std::to_string(i) + " is empty or outside [0, K-1]");
    }
    if (i > 0 && g.lo != groups[i - 1].hi + 1) {
      throw ValidationError("age groups must be sorted, contiguous and non-overlapping (group " +
                            std::to_string(i) + ")");
    }
  }
}

torch::Tensor anchor_interpolation_batch(const torch::Tensor& w, std::span<const AgeGroup> groups,
                                         const torch::Tensor& t) {
  validate_anchor_groups(groups, w.size(0));
  std::vector<torch::Tensor> anchors;
  std::vector<double> centers;
  for (const auto& g : groups) {
    anchors.push_back(w.slice(0, g.lo, g.hi + 1).mean(0));
    centers.push_back(g.center());
  }
  const auto td = t.detach().to(torch::kDouble).contiguous();
  const double covered_lo = static_cast<double>(groups.front().lo);
  const double covered_hi = static_cast<double>(groups.back().hi);
  std::vector<torch::Tensor> rows;
  rows.reserve(static_cast<std::size_t>(td.size(0)));
  for (std::int64_t i = 0; i < td.size(0); ++i) {
    const double age = td[i].item<double>();
    if (age < covered_lo || age > covered_hi) throw ValidationError("target age outside the anchor groups' range");
    if (age <= centers.front()) {
      rows.push_back(anchors.front());
      continue;
    }
    if (age >= centers.back()) {
      rows.push_back(anchors.back());
      continue;
    }
    std::size_t g = 0;
    while (centers[g + 1] < age) ++g;
    const double f = (age - centers[g]) / (centers[g + 1] - centers[g]);
    rows.push_back((1.0 - f) * anchors[g] + f * anchors[g + 1]);
  }
  return torch::stack(rows);
}

// ---- value-typed ------------------------------------------------------------

AgeDistribution estimate_distribution(const torch::Tensor& encoding, EstimatorHeadImpl& head) {
  if (encoding.dim() != 3) throw ContractError("estimate_distribution expects one (D, H, W) encoding");
  return AgeDistribution(estimate_distribution_batch(encoding.unsqueeze(0), head).squeeze(0));
}

AgeDistributionStats distribution_stats(const AgeDistribution& p) {
  const auto probs = p.probs().to(torch::kDouble).unsqueeze(0);
  AgeDistributionStats s;
  s.mean = distribution_mean(probs).item<double>();
  s.variance = std::max(0.0, distribution_variance(probs).item<double>());
  s.rounded_age = static_cast<std::int64_t>(std::floor(s.mean + 0.5));
  return s;
}

PersonalizedAgeEmbedding aging_basis(const AgingBasisMatrix& w, std::int64_t j) {
  if (j < 0 || j >= w.num_classes()) {
    throw IndexError("aging basis index " + std::to_string(j) + " outside [0, " +
                     std::to_string(w.num_classes() - 1) + "]");
  }
  return PersonalizedAgeEmbedding(w.weights()[j].clone());
}

PersonalizedAgeEmbedding fractional_basis(const AgingBasisMatrix& w, TargetAge t) {
  if (t.value() > static_cast<double>(w.num_classes() - 1)) throw ValidationError("target age outside [0, K-1]");
  const auto tt = torch::full({1}, t.value(), w.weights().options());
  return PersonalizedAgeEmbedding(fractional_basis_batch(w.weights(), tt).squeeze(0).clone());
}

PersonalizedAgeEmbedding personalized_target_embedding(const AgeDistribution& p, const AgingBasisMatrix& w,
                                                       TargetAge t) {
  if (p.num_classes() != w.num_classes()) throw ContractError("distribution and basis matrix disagree on K");
  const auto probs = p.probs().to(w.weights().scalar_type()).unsqueeze(0);
  const auto tt = torch::full({1}, t.value(), w.weights().options());
  return PersonalizedAgeEmbedding(personalized_target_embedding_batch(probs, w.weights(), tt).squeeze(0));
}

torch::Tensor apply_pat(const torch::Tensor& encoding, const PersonalizedAgeEmbedding& embedding, PatImpl& pat) {
  if (encoding.dim() == 3) {
    return pat.forward(encoding.unsqueeze(0), embedding.values().unsqueeze(0)).squeeze(0);
  }
  if (encoding.dim() != 4) throw ContractError("apply_pat expects (D, H, W) or (N, D, H, W)");
  return pat.forward(encoding, embedding.values().unsqueeze(0));
}

PersonalizedAgeEmbedding anchor_interpolation_embedding(const AgingBasisMatrix& w, std::span<const AgeGroup> groups,
                                                        TargetAge t) {
  const auto tt = torch::full({1}, t.value(), torch::kDouble);
  return PersonalizedAgeEmbedding(anchor_interpolation_batch(w.weights(), groups, tt).squeeze(0));
}

}  // namespace aging
