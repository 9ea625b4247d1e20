#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "aging/age_embedding.hpp"
#include "aging/networks.hpp"
#include "aging/training.hpp"

namespace aging {

// ---- inference ------------------------------------------------------------------

enum class AgingMode { kSelfEstimated, kInterpolated };
enum class AgeEstimator { kEmbedded, kOracle };

// Anchor groups of the interpolation baseline on the synthetic [15, 70] range:
// under 30, 30-39, 40-49 and 50 and over.
std::vector<AgeGroup> default_anchor_groups();

// Self-estimated ages m (N,) of images (N, 3, S, S).
torch::Tensor self_estimated_age(ModelBundle& models, const torch::Tensor& images);

// G(PAT(E(x), a~_t)) for images (N, 3, S, S) and targets (N,). The interpolated
// mode swaps the target's own basis for the anchor-interpolated one. Images are
// processed one at a time so any single output is independent of its batch.
torch::Tensor age_transform(ModelBundle& models, const torch::Tensor& images, const torch::Tensor& targets,
                            AgingMode mode = AgingMode::kSelfEstimated,
                            std::span<const AgeGroup> anchors = {});

// Generation at t = [m], the reconstruction condition used in training.
torch::Tensor reconstruct(ModelBundle& models, const torch::Tensor& images);
double reconstruction_l1(ModelBundle& models, const torch::Tensor& images);

// Estimated ages (N,) of generated images; NaN marks unreadable oracle outputs.
torch::Tensor estimate_ages(ModelBundle& models, const torch::Tensor& images, AgeEstimator estimator);

// ---- continuous aging -------------------------------------------------------------

struct AgeGrid {
  std::int64_t lo = 25;
  std::int64_t hi = 65;
  std::int64_t step = 3;

  // lo, lo + step, ... up to and including the last value <= hi.
  std::vector<std::int64_t> values() const;
  // Throws ValidationError for step < 1 or lo > hi.
  void validate() const;
};

struct ConfusionMatrix {
  std::vector<std::int64_t> ages;  // shared row and column axis
  std::int64_t step = 0;
  // counts[r][c]: estimates for target ages[r] whose nearest grid age is ages[c].
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<double> mean_estimate;   // per row over readable estimates
  std::vector<double> mean_abs_error;  // per row
  std::vector<std::int64_t> unreadable;
  AgingMode mode = AgingMode::kSelfEstimated;
  AgeEstimator estimator = AgeEstimator::kEmbedded;

  // Mean |estimate - target| over every readable estimate.
  double overall_mean_abs_error() const;
};

// Rejects models that never took a training step.
ConfusionMatrix continuous_confusion_matrix(ModelBundle& models, const torch::Tensor& test_images, const AgeGrid& grid,
                                            AgingMode mode, AgeEstimator estimator = AgeEstimator::kEmbedded,
                                            std::span<const AgeGroup> anchors = {});

// The age congruent to real_age mod 10 inside [lo, hi) closest to real_age.
std::int64_t group_target_age(std::int64_t real_age, std::int64_t lo, std::int64_t hi);

struct HalfOpenGroup {
  std::int64_t lo = 0;
  std::int64_t hi = 0;  // exclusive
};

// Groups of the mean-age table on the synthetic range.
std::vector<HalfOpenGroup> default_age_table_groups();

struct GroupMean {
  HalfOpenGroup group;
  double mean_target = 0.0;
  double mean_estimate = 0.0;
  std::int64_t count = 0;
};

std::vector<GroupMean> mean_age_per_group(ModelBundle& models, const torch::Tensor& test_images,
                                          const std::vector<std::int64_t>& real_ages,
                                          std::span<const HalfOpenGroup> groups, AgeEstimator estimator);

// Frames G((1 - alpha) e_a,t + alpha e_b,t) for alpha = 0, 1/(n-1), ..., 1.
std::vector<torch::Tensor> identity_interpolation(ModelBundle& models, const torch::Tensor& img_a,
                                                  const torch::Tensor& img_b, double target, std::int64_t n_steps);

// Mean oracle identity distance between each image and its transformations
// over the grid, one value per input image.
std::vector<double> sweep_identity_distance(ModelBundle& models, const torch::Tensor& images, const AgeGrid& grid);

// ---- FID ------------------------------------------------------------------------------

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline constexpr double kPsdTolerance = 1e-8;

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the trace of the
// square root taken through the symmetric product S_a^(1/2) S_b S_a^(1/2).
double fid(const GaussianStats& a, const GaussianStats& b);

// images (N, 3, S, S) -> features (N, F).
using FeatureExtractor = std::function<torch::Tensor(const torch::Tensor&)>;

// Globally pooled encoder features of the trained model.
FeatureExtractor encoder_feature_extractor(ModelBundle& models);

// Sample mean and unbiased covariance of rows of features (N, F), N >= 2.
GaussianStats gaussian_stats(const torch::Tensor& features);
GaussianStats feature_stats(const torch::Tensor& images, const FeatureExtractor& extractor);

// ---- ablation -------------------------------------------------------------------------

struct AblationArm {
  bool residual_enabled = true;
  double self_estimated_mae = 0.0;    // oracle or embedded estimates over the grid
  double interpolated_mae = 0.0;
  double identity_distance = 0.0;     // mean over test images
  double reconstruction_l1 = 0.0;
  std::filesystem::path checkpoint;
};

struct AblationReport {
  AblationArm residual;
  AblationArm direct;
  AgeEstimator estimator = AgeEstimator::kOracle;
  AgeGrid grid;
};

// Trains twin models from the same seed with the residual embedding on and off
// (each under out_dir/residual_on and out_dir/residual_off) and evaluates both.
AblationReport ablation_compare(const TrainConfig& config, const TrainingSet& train_set, const TrainingSet& test_set,
                                const std::filesystem::path& out_dir, const AgeGrid& grid,
                                AgeEstimator estimator = AgeEstimator::kOracle);

}  // namespace aging
