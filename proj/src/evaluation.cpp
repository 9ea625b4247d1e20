#include "aging/evaluation.hpp"

#include <cmath>
#include <limits>

#include "aging/checkpoint.hpp"
#include "aging/data.hpp"
#include "aging/errors.hpp"

namespace aging {
namespace {

constexpr std::int64_t kChunk = 32;

// Runs `fn` over consecutive chunks of the first dimension and concatenates.
template <typename Fn>
torch::Tensor chunked(const torch::Tensor& x, Fn&& fn) {
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += kChunk) parts.push_back(fn(x.slice(0, i, std::min(x.size(0), i + kChunk))));
  return torch::cat(parts);
}

void check_images(const ModelBundle& models, const torch::Tensor& images) {
  const auto s = models.profile.image_side;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s) {
    throw ContractError("expected images (N, 3, " + std::to_string(s) + ", " + std::to_string(s) + ")");
  }
}

torch::Tensor target_embedding(ModelBundle& models, const torch::Tensor& probs, const torch::Tensor& targets,
                               AgingMode mode, std::span<const AgeGroup> anchors) {
  const auto w = models.estimator->weight();
  if (mode == AgingMode::kSelfEstimated) {
    return personalized_target_embedding_batch(probs, w, targets, models.residual_enabled);
  }
  auto basis = anchor_interpolation_batch(w, anchors, targets).to(w.scalar_type());
  if (!models.residual_enabled) return basis;
  return residual_embedding_batch(probs, w) + basis;
}

torch::Tensor transform_one(ModelBundle& models, const torch::Tensor& image, const torch::Tensor& target,
                            AgingMode mode, std::span<const AgeGroup> anchors) {
  const auto enc = models.encoder->forward(image);
  const auto probs = torch::softmax(models.estimator->forward(enc), 1);
  const auto emb = target_embedding(models, probs, target, mode, anchors);
  return models.generator->forward(models.pat->forward(enc, emb));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

}  // namespace

std::vector<AgeGroup> default_anchor_groups() { return {{15, 29}, {30, 39}, {40, 49}, {50, 70}}; }

std::vector<HalfOpenGroup> default_age_table_groups() { return {{15, 30}, {30, 40}, {40, 50}, {50, 71}}; }

torch::Tensor self_estimated_age(ModelBundle& models, const torch::Tensor& images) {
  check_images(models, images);
  torch::NoGradGuard no_grad;
  models.eval();
  return chunked(images, [&](const torch::Tensor& x) {
    return distribution_mean(torch::softmax(models.estimator->forward(models.encoder->forward(x)), 1));
  });
}

torch::Tensor age_transform(ModelBundle& models, const torch::Tensor& images, const torch::Tensor& targets,
                            AgingMode mode, std::span<const AgeGroup> anchors) {
  check_images(models, images);
  if (targets.dim() != 1 || targets.size(0) != images.size(0)) throw ContractError("one target age per image");
  const auto k = models.profile.num_classes;
  if ((targets < 0).any().item<bool>() || (targets > static_cast<double>(k - 1)).any().item<bool>()) {
    throw ValidationError("target age outside [0, " + std::to_string(k - 1) + "]");
  }
  const auto default_anchors = default_anchor_groups();
  if (mode == AgingMode::kInterpolated && anchors.empty()) anchors = default_anchors;
  torch::NoGradGuard no_grad;
  models.eval();
  const auto t = targets.to(images.scalar_type());
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(images.size(0)));
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    out.push_back(transform_one(models, images.slice(0, i, i + 1), t.slice(0, i, i + 1), mode, anchors));
  }
  return torch::cat(out);
}

torch::Tensor reconstruct(ModelBundle& models, const torch::Tensor& images) {
  const auto m = self_estimated_age(models, images);
  return age_transform(models, images, round_half_up(m).to(images.scalar_type()));
}

double reconstruction_l1(ModelBundle& models, const torch::Tensor& images) {
  return (reconstruct(models, images) - images).abs().mean().item<double>();
}

torch::Tensor estimate_ages(ModelBundle& models, const torch::Tensor& images, AgeEstimator estimator) {
  if (estimator == AgeEstimator::kEmbedded) return self_estimated_age(models, images).to(torch::kDouble);
  auto out = torch::empty({images.size(0)}, torch::kDouble);
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    const auto age = oracle_age_readout(images[i]);
    out[i] = age ? *age : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---- continuous aging -------------------------------------------------------------

void AgeGrid::validate() const {
  if (step < 1) throw ValidationError("age grid step must be >= 1");
  if (lo > hi) throw ValidationError("age grid needs lo <= hi");
}

std::vector<std::int64_t> AgeGrid::values() const {
  validate();
  std::vector<std::int64_t> v;
  for (auto a = lo; a <= hi; a += step) v.push_back(a);
  return v;
}

double ConfusionMatrix::overall_mean_abs_error() const {
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::size_t r = 0; r < ages.size(); ++r) {
    std::int64_t readable = 0;
    for (auto c : counts[r]) readable += c;
    if (readable == 0) continue;
    sum += mean_abs_error[r] * static_cast<double>(readable);
    n += readable;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

ConfusionMatrix continuous_confusion_matrix(ModelBundle& models, const torch::Tensor& test_images, const AgeGrid& grid,
                                            AgingMode mode, AgeEstimator estimator,
                                            std::span<const AgeGroup> anchors) {
  if (models.step == 0) {
    throw ValidationError("models have never been trained (step 0); refusing to evaluate a placeholder");
  }
  if (test_images.dim() != 4 || test_images.size(0) == 0) throw ValidationError("test set is empty");
  ConfusionMatrix cm;
  cm.ages = grid.values();
  cm.step = grid.step;
  cm.mode = mode;
  cm.estimator = estimator;
  const auto n_ages = cm.ages.size();
  cm.counts.assign(n_ages, std::vector<std::int64_t>(n_ages, 0));
  const auto n = test_images.size(0);
  for (std::size_t r = 0; r < n_ages; ++r) {
    const auto target = static_cast<double>(cm.ages[r]);
    const auto fakes = age_transform(models, test_images, torch::full({n}, target, test_images.options()), mode, anchors);
    const auto est = estimate_ages(models, fakes, estimator);
    std::vector<double> readable;
    std::int64_t missing = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double e = est[i].item<double>();
      if (!std::isfinite(e)) {
        ++missing;
        continue;
      }
      readable.push_back(e);
      const double pos = (e - static_cast<double>(grid.lo)) / static_cast<double>(grid.step);
      const auto c = std::clamp<std::int64_t>(std::llround(pos), 0, static_cast<std::int64_t>(n_ages) - 1);
      ++cm.counts[r][static_cast<std::size_t>(c)];
    }
    std::vector<double> errors;
    for (double e : readable) errors.push_back(std::abs(e - target));
    cm.mean_estimate.push_back(mean_of(readable));
    cm.mean_abs_error.push_back(mean_of(errors));
    cm.unreadable.push_back(missing);
  }
  return cm;
}

std::int64_t group_target_age(std::int64_t real_age, std::int64_t lo, std::int64_t hi) {
  if (real_age < 0 || lo < 0 || lo >= hi) throw ValidationError("invalid age or age group");
  const auto mod = [](std::int64_t a) { return ((a % 10) + 10) % 10; };
  std::int64_t best = -1;
  for (std::int64_t a = lo; a < hi; ++a) {
    if (mod(a) != mod(real_age)) continue;
    if (best < 0 || std::abs(a - real_age) < std::abs(best - real_age)) best = a;
  }
  if (best < 0) {
    throw ValidationError("no age congruent to " + std::to_string(real_age) + " mod 10 in [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + ")");
  }
  return best;
}

std::vector<GroupMean> mean_age_per_group(ModelBundle& models, const torch::Tensor& test_images,
                                          const std::vector<std::int64_t>& real_ages,
                                          std::span<const HalfOpenGroup> groups, AgeEstimator estimator) {
  if (test_images.dim() != 4 || test_images.size(0) == 0) throw ValidationError("test set is empty");
  if (static_cast<std::int64_t>(real_ages.size()) != test_images.size(0)) {
    throw ContractError("one real age per test image");
  }
  std::vector<GroupMean> table;
  for (const auto& g : groups) {
    std::vector<double> targets;
    for (auto a : real_ages) targets.push_back(static_cast<double>(group_target_age(a, g.lo, g.hi)));
    const auto t = torch::tensor(targets, torch::kDouble).to(test_images.scalar_type());
    const auto est = estimate_ages(models, age_transform(models, test_images, t), estimator);
    GroupMean row{g, 0.0, 0.0, 0};
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double e = est[static_cast<std::int64_t>(i)].item<double>();
      if (!std::isfinite(e)) continue;
      row.mean_target += targets[i];
      row.mean_estimate += e;
      ++row.count;
    }
    if (row.count == 0) {
      throw ValidationError("no readable estimate for group [" + std::to_string(g.lo) + ", " + std::to_string(g.hi) + ")");
    }
    row.mean_target /= static_cast<double>(row.count);
    row.mean_estimate /= static_cast<double>(row.count);
    table.push_back(row);
  }
  return table;
}

std::vector<torch::Tensor> identity_interpolation(ModelBundle& models, const torch::Tensor& img_a,
                                                  const torch::Tensor& img_b, double target, std::int64_t n_steps) {
  if (img_a.sizes() != img_b.sizes()) throw ContractError("interpolation endpoints differ in shape");
  if (n_steps < 2) throw ValidationError("interpolation needs at least 2 steps");
  check_images(models, img_a.unsqueeze(0));
  torch::NoGradGuard no_grad;
  models.eval();
  const auto t = torch::full({1}, target, img_a.options());
  const auto transformed = [&](const torch::Tensor& img) {
    const auto enc = models.encoder->forward(img.unsqueeze(0));
    const auto probs = torch::softmax(models.estimator->forward(enc), 1);
    return models.pat->forward(enc, target_embedding(models, probs, t, AgingMode::kSelfEstimated, {}));
  };
  const auto ea = transformed(img_a);
  const auto eb = transformed(img_b);
  std::vector<torch::Tensor> frames;
  for (std::int64_t k = 0; k < n_steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(n_steps - 1);
    // e_a + alpha (e_b - e_a) keeps equal endpoints exact at every alpha.
    const auto mix = k == 0 ? ea : k == n_steps - 1 ? eb : ea + alpha * (eb - ea);
    frames.push_back(models.generator->forward(mix).squeeze(0));
  }
  return frames;
}

std::vector<double> sweep_identity_distance(ModelBundle& models, const torch::Tensor& images, const AgeGrid& grid) {
  check_images(models, images);
  const auto n = images.size(0);
  std::vector<double> total(static_cast<std::size_t>(n), 0.0);
  const auto ages = grid.values();
  for (auto age : ages) {
    const auto fakes = age_transform(models, images, torch::full({n}, static_cast<double>(age), images.options()));
    for (std::int64_t i = 0; i < n; ++i) total[static_cast<std::size_t>(i)] += oracle_identity_distance(images[i], fakes[i]);
  }
  for (auto& v : total) v /= static_cast<double>(ages.size());
  return total;
}

FeatureExtractor encoder_feature_extractor(ModelBundle& models) {
  return [&models](const torch::Tensor& images) {
    check_images(models, images);
    torch::NoGradGuard no_grad;
    models.eval();
    return chunked(images, [&](const torch::Tensor& x) { return models.encoder->forward(x).mean({2, 3}); });
  };
}

// ---- ablation -------------------------------------------------------------------------

AblationReport ablation_compare(const TrainConfig& config, const TrainingSet& train_set, const TrainingSet& test_set,
                                const std::filesystem::path& out_dir, const AgeGrid& grid, AgeEstimator estimator) {
  config.validate();
  grid.validate();
  if (test_set.size() == 0) throw ValidationError("ablation needs a nonempty test set");
  AblationReport report;
  report.estimator = estimator;
  report.grid = grid;
  for (bool residual : {true, false}) {
    TrainConfig arm_config = config;
    arm_config.residual_enabled = residual;
    TrainOptions options;
    options.out_dir = out_dir / (residual ? "residual_on" : "residual_off");
    auto result = train(arm_config, train_set, options);
    auto& models = result.models;
    AblationArm arm;
    arm.residual_enabled = residual;
    arm.checkpoint = result.checkpoint;
    if (models.step > 0) {
      arm.self_estimated_mae =
          continuous_confusion_matrix(models, test_set.images, grid, AgingMode::kSelfEstimated, estimator)
              .overall_mean_abs_error();
      arm.interpolated_mae =
          continuous_confusion_matrix(models, test_set.images, grid, AgingMode::kInterpolated, estimator)
              .overall_mean_abs_error();
    } else {
      arm.self_estimated_mae = arm.interpolated_mae = std::numeric_limits<double>::quiet_NaN();
    }
    arm.identity_distance = mean_of(sweep_identity_distance(models, test_set.images, grid));
    arm.reconstruction_l1 = reconstruction_l1(models, test_set.images);
    (residual ? report.residual : report.direct) = arm;
  }
  return report;
}

}  // namespace aging
