#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "aging/data.hpp"
#include "aging/losses.hpp"
#include "aging/networks.hpp"
#include "aging/profile.hpp"

namespace aging {

struct AgeRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  friend bool operator==(const AgeRange&, const AgeRange&) = default;
};

// Defaults follow the published optimizer settings for the 256-pixel profile.
struct TrainConfig {
  SizeProfile profile = SizeProfile::paper();
  std::int64_t batch_size = 20;
  std::int64_t epochs = 200;
  double lr = 2e-4;
  std::int64_t decay_start_epoch = 100;
  LossWeights weights;
  std::uint64_t seed = 0;
  // Unset means the dataset's observed label range.
  std::optional<AgeRange> target_age_range;
  std::int64_t d_sample_window = 5;
  // When false, discriminator reals are drawn uniformly from the whole dataset.
  bool d_near_target = true;
  bool beta_enabled = true;
  bool residual_enabled = true;

  // Throws ConfigError listing every violated constraint.
  void validate() const;
};

// Config files hold one `key = value` per line; '#' starts a comment. Keys are
// the TrainConfig field names, with the loss weights spelled lambda_mv1 ...
// lambda_adv and target_age_range written "lo,hi" or "auto".
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
// Applies one key/value pair; unknown keys and malformed values are ConfigErrors.
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string format_config(const TrainConfig& config);

// Training images held in memory with their integer labels.
struct TrainingSet {
  torch::Tensor images;  // (N, 3, S, S)
  torch::Tensor ages;    // (N,) int64
  std::vector<ManifestEntry> entries;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  AgeRange observed_range() const;
};

TrainingSet load_training_set(const std::filesystem::path& manifest, Split split, const SizeProfile& profile);

// Dataset items grouped by age for near-target sampling.
class AgeIndex {
 public:
  explicit AgeIndex(const std::vector<std::int64_t>& ages);

  // A uniformly drawn item with |age - target| <= window; when none exists,
  // a uniformly drawn item of the nearest available age (lower age on ties).
  std::int64_t sample(std::int64_t target, std::int64_t window, std::mt19937_64& rng) const;
  std::int64_t age_of(std::int64_t item) const { return ages_[static_cast<std::size_t>(item)]; }

 private:
  std::vector<std::int64_t> ages_;
  std::vector<std::pair<std::int64_t, std::vector<std::int64_t>>> by_age_;  // sorted by age
};

// Uniform integer targets over [lo, hi].
std::vector<std::int64_t> sample_target_ages(std::size_t n, const AgeRange& range, std::mt19937_64& rng);
// Item indices of real images near each target.
std::vector<std::int64_t> sample_real_for_discriminator(const AgeIndex& index, const std::vector<std::int64_t>& targets,
                                                        std::int64_t window, std::mt19937_64& rng);

struct TrainBatch {
  torch::Tensor images;   // x
  torch::Tensor labels;   // y, int64
  torch::Tensor targets;  // t, float
  torch::Tensor d_real;   // z, real images near t
};

// Per-epoch randomness: shuffling, target ages and discriminator reals all come
// from a generator seeded by (seed, epoch), so a resumed run repeats a fresh one.
std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch);

// Linear decay to zero over [decay_start_epoch, epochs).
double lr_schedule(std::int64_t epoch, const TrainConfig& config);

// Live networks, their optimizers and the frozen estimator copies.
class Trainer {
 public:
  Trainer(ModelBundle models, TrainConfig config);

  // One update of E, C, PAT and G. Throws NonFiniteLoss before touching any
  // parameter when a component is NaN or infinite.
  LossReport generator_step(const TrainBatch& batch);
  // One update of D on near-target reals against detached fakes.
  LossReport discriminator_step(const TrainBatch& batch);

  void set_lr(double lr);

  ModelBundle& models() { return models_; }
  const ModelBundle& models() const { return models_; }
  const TrainConfig& config() const { return config_; }
  const FrozenEncoder& frozen_encoder() const { return frozen_encoder_; }
  const FrozenEstimatorHead& frozen_estimator() const { return frozen_estimator_; }
  torch::optim::Adam& generator_optimizer() { return *g_optim_; }
  torch::optim::Adam& discriminator_optimizer() { return *d_optim_; }

 private:
  // Fake images G(PAT(E(x), a~_t)) and the transformed encodings.
  std::pair<torch::Tensor, torch::Tensor> transform(const torch::Tensor& encodings, const torch::Tensor& probs,
                                                    const torch::Tensor& targets);

  ModelBundle models_;
  TrainConfig config_;
  FrozenEncoder frozen_encoder_;
  FrozenEstimatorHead frozen_estimator_;
  std::unique_ptr<torch::optim::Adam> g_optim_;
  std::unique_ptr<torch::optim::Adam> d_optim_;
};

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  LossReport losses;
};

std::string format_log_record(const StepRecord& record);

struct TrainOptions {
  std::filesystem::path out_dir;
  // Continue from out_dir/checkpoint.pt when it exists.
  bool resume = false;
  // Stop after this many steps in total (for smoke runs); no checkpoint is
  // written for a partially finished epoch.
  std::optional<std::int64_t> max_steps;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::int64_t epoch, ModelBundle&)> on_epoch_end;
};

struct TrainResult {
  ModelBundle models;
  std::vector<StepRecord> log;
  std::filesystem::path checkpoint;
  std::filesystem::path log_file;
};

inline constexpr const char* kCheckpointFile = "checkpoint.pt";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";

// Alternates one discriminator and one generator step per batch, writes the
// checkpoint after every epoch and appends one JSON record per step to the log.
TrainResult train(const TrainConfig& config, const TrainingSet& data, const TrainOptions& options);

// Batch of the given dataset items with freshly drawn targets and discriminator
// reals; near-target reals when `window` is set, uniform draws otherwise.
TrainBatch make_batch(const TrainingSet& data, const AgeIndex& index, const std::vector<std::int64_t>& items,
                      const AgeRange& targets, std::optional<std::int64_t> window, std::mt19937_64& rng);

}  // namespace aging
