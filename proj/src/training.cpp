#include "aging/training.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "aging/checkpoint.hpp"
#include "aging/errors.hpp"

namespace aging {

AgeRange TrainingSet::observed_range() const {
  if (size() == 0) throw ValidationError("empty training set has no age range");
  return {ages.min().item<std::int64_t>(), ages.max().item<std::int64_t>()};
}

TrainingSet load_training_set(const std::filesystem::path& manifest, Split split, const SizeProfile& profile) {
  TrainingSet set;
  set.entries = filter_split(load_manifest(manifest), split);
  if (set.entries.empty()) throw ValidationError("manifest " + manifest.string() + " has no images in the requested split");
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> ages;
  for (const auto& e : set.entries) {
    images.push_back(load_image(resolve_entry(manifest, e), profile));
    ages.push_back(e.age);
  }
  set.images = torch::stack(images);
  set.ages = torch::tensor(ages, torch::kLong);
  return set;
}

// ---- sampling -----------------------------------------------------------------

AgeIndex::AgeIndex(const std::vector<std::int64_t>& ages) : ages_(ages) {
  if (ages.empty()) throw ValidationError("cannot index an empty dataset");
  std::map<std::int64_t, std::vector<std::int64_t>> groups;
  for (std::size_t i = 0; i < ages.size(); ++i) groups[ages[i]].push_back(static_cast<std::int64_t>(i));
  by_age_.assign(groups.begin(), groups.end());
}

std::int64_t AgeIndex::sample(std::int64_t target, std::int64_t window, std::mt19937_64& rng) const {
  const auto by_key = [](const auto& group, std::int64_t age) { return group.first < age; };
  auto first = std::lower_bound(by_age_.begin(), by_age_.end(), target - window, by_key);
  auto last = std::lower_bound(by_age_.begin(), by_age_.end(), target + window + 1, by_key);
  std::size_t count = 0;
  for (auto it = first; it != last; ++it) count += it->second.size();
  if (count > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    auto k = pick(rng);
    for (auto it = first; it != last; ++it) {
      if (k < it->second.size()) return it->second[k];
      k -= it->second.size();
    }
  }
  // Nearest available age; `first` is the first group above the window.
  auto nearest = first;
  if (nearest == by_age_.end() ||
      (nearest != by_age_.begin() && target - std::prev(nearest)->first <= nearest->first - target)) {
    nearest = std::prev(nearest);
  }
  std::uniform_int_distribution<std::size_t> pick(0, nearest->second.size() - 1);
  return nearest->second[pick(rng)];
}

std::vector<std::int64_t> sample_target_ages(std::size_t n, const AgeRange& range, std::mt19937_64& rng) {
  if (range.lo > range.hi) throw ConfigError("empty target age range");
  std::uniform_int_distribution<std::int64_t> dist(range.lo, range.hi);
  std::vector<std::int64_t> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

std::vector<std::int64_t> sample_real_for_discriminator(const AgeIndex& index, const std::vector<std::int64_t>& targets,
                                                        std::int64_t window, std::mt19937_64& rng) {
  std::vector<std::int64_t> out;
  out.reserve(targets.size());
  for (auto t : targets) out.push_back(index.sample(t, window, rng));
  return out;
}

TrainBatch make_batch(const TrainingSet& data, const AgeIndex& index, const std::vector<std::int64_t>& items,
                      const AgeRange& targets, std::optional<std::int64_t> window, std::mt19937_64& rng) {
  const auto t = sample_target_ages(items.size(), targets, rng);
  std::vector<std::int64_t> reals;
  if (window) {
    reals = sample_real_for_discriminator(index, t, *window, rng);
  } else {
    std::uniform_int_distribution<std::int64_t> pick(0, data.size() - 1);
    for (std::size_t i = 0; i < t.size(); ++i) reals.push_back(pick(rng));
  }
  const auto idx = torch::tensor(items, torch::kLong);
  TrainBatch b;
  b.images = data.images.index_select(0, idx);
  b.labels = data.ages.index_select(0, idx);
  b.targets = torch::tensor(t, torch::kLong).to(data.images.scalar_type());
  b.d_real = data.images.index_select(0, torch::tensor(reals, torch::kLong));
  return b;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch) {
  // splitmix64 over (seed, epoch)
  std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double lr_schedule(std::int64_t epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  }
  if (epoch < config.decay_start_epoch) return config.lr;
  return config.lr * static_cast<double>(config.epochs - epoch) /
         static_cast<double>(config.epochs - config.decay_start_epoch);
}

// ---- trainer ------------------------------------------------------------------

namespace {

std::string describe(const LossReport& r) {
  std::ostringstream os;
  for (const auto& [k, v] : r.values()) os << " " << k << "=" << v;
  return os.str();
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.set_requires_grad(on);
}

torch::optim::AdamOptions adam_options(double lr) { return torch::optim::AdamOptions(lr).betas({0.5, 0.999}); }

}  // namespace

Trainer::Trainer(ModelBundle models, TrainConfig config)
    : models_(std::move(models)),
      config_(std::move(config)),
      frozen_encoder_(build_encoder(models_.profile, 0)),
      frozen_estimator_(build_estimator_head(models_.profile, 0)) {
  config_.validate();
  if (!(models_.profile == config_.profile)) throw ContractError("models were built for a different size profile");
  // Frozen copies must match the live dtype before the first sync.
  const auto dtype = models_.encoder->parameters().front().scalar_type();
  frozen_encoder_.net()->to(dtype);
  frozen_estimator_.net()->to(dtype);
  g_optim_ = std::make_unique<torch::optim::Adam>(models_.generator_side_parameters(), adam_options(config_.lr));
  d_optim_ = std::make_unique<torch::optim::Adam>(models_.discriminator_parameters(), adam_options(config_.lr));
}

void Trainer::set_lr(double lr) {
  for (auto* opt : {g_optim_.get(), d_optim_.get()}) {
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

std::pair<torch::Tensor, torch::Tensor> Trainer::transform(const torch::Tensor& encodings, const torch::Tensor& probs,
                                                           const torch::Tensor& targets) {
  const auto embedding =
      personalized_target_embedding_batch(probs, models_.estimator->weight(), targets, models_.residual_enabled);
  auto transformed = models_.pat->forward(encodings, embedding);
  return {models_.generator->forward(transformed), transformed};
}

LossReport Trainer::generator_step(const TrainBatch& batch) {
  models_.train();
  frozen_encoder_.sync(models_.encoder);
  frozen_estimator_.sync(models_.estimator);
  const auto& w = config_.weights;

  const auto enc = models_.encoder->forward(batch.images);
  const auto logits = models_.estimator->forward(enc);
  const auto real_terms = mean_variance_terms(logits, batch.labels);
  const auto real = real_terms.total(w);
  const auto probs = torch::softmax(logits, 1);
  // A NaN self-estimate cannot be rounded onto an age class; fail before indexing.
  if (!torch::isfinite(real).item<bool>() || !torch::isfinite(probs).all().item<bool>())
    throw NonFiniteLoss("non-finite age estimate on the real batch");

  const auto [fake, transformed] = transform(enc, probs, batch.targets);
  const auto fake_terms = fake_age_loss(transformed, fake, batch.targets, frozen_encoder_, frozen_estimator_, w);

  // Reconstruction targets the rounded self-estimate, never the label.
  const auto self_age = round_half_up(distribution_mean(probs)).to(probs.scalar_type());
  const auto recon = transform(enc, probs, self_age).first;
  const auto idt = identity_l1_loss(batch.images, recon);

  const auto d_params = models_.discriminator_parameters();
  set_requires_grad(d_params, false);
  const auto adv = hinge_g_loss(models_.discriminator->forward(fake));
  set_requires_grad(d_params, true);

  const auto total = total_generator_loss(real, fake_terms.total(w), idt, adv, w);

  LossReport report;
  report.set(LossReport::kSoftmaxTerm, real_terms.softmax.item<double>());
  report.set(LossReport::kMeanTerm, real_terms.mean.item<double>());
  report.set(LossReport::kVarianceTerm, real_terms.variance.item<double>());
  report.set(LossReport::kRealAge, real.item<double>());
  report.set(LossReport::kFakeAgeEncoding, fake_terms.encoding_level.item<double>());
  report.set(LossReport::kFakeAgeImage, fake_terms.image_level.item<double>());
  report.set(LossReport::kIdentityL1, idt.item<double>());
  report.set(LossReport::kAdvG, adv.item<double>());
  report.set(LossReport::kTotalG, total.item<double>());
  if (!report.all_finite()) throw NonFiniteLoss("non-finite generator-side loss:" + describe(report));

  g_optim_->zero_grad();
  total.backward();
  g_optim_->step();
  return report;
}

LossReport Trainer::discriminator_step(const TrainBatch& batch) {
  torch::Tensor fake;
  {
    // Eval mode keeps the generator side's power-iteration state untouched.
    torch::NoGradGuard no_grad;
    models_.eval();
    const auto enc = models_.encoder->forward(batch.images);
    const auto probs = torch::softmax(models_.estimator->forward(enc), 1);
    fake = transform(enc, probs, batch.targets).first;
  }
  models_.train();
  const auto loss =
      hinge_d_loss(models_.discriminator->forward(batch.d_real), models_.discriminator->forward(fake));
  LossReport report;
  report.set(LossReport::kAdvD, loss.item<double>());
  report.set(LossReport::kTotalD, loss.item<double>());
  if (!report.all_finite()) throw NonFiniteLoss("non-finite discriminator loss:" + describe(report));
  d_optim_->zero_grad();
  loss.backward();
  d_optim_->step();
  return report;
}

// ---- loop -----------------------------------------------------------------------

std::string format_log_record(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  for (const auto& [k, v] : r.losses.values()) j[k] = v;
  return j.dump();
}

namespace {

std::vector<StepRecord> read_log_before(const std::filesystem::path& path, std::int64_t epoch) {
  std::vector<StepRecord> kept;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.epoch = j.at("epoch").get<std::int64_t>();
    r.lr = j.at("lr").get<double>();
    if (r.epoch >= epoch) continue;
    for (const auto& [k, v] : j.items()) {
      if (k != "step" && k != "epoch" && k != "lr") r.losses.set(k, v.get<double>());
    }
    kept.push_back(std::move(r));
  }
  return kept;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainingSet& data, const TrainOptions& options) {
  config.validate();
  if (data.size() == 0) throw ValidationError("training set is empty");
  const auto side = config.profile.image_side;
  if (data.images.dim() != 4 || data.images.size(1) != 3 || data.images.size(2) != side || data.images.size(3) != side) {
    throw ValidationError("training images do not match the " + config.profile.name() + " profile's " +
                          std::to_string(side) + "-pixel side");
  }
  const auto observed = data.observed_range();
  if (observed.lo < 0 || observed.hi > config.profile.num_classes - 1) {
    throw ValidationError("dataset ages fall outside [0, K-1]");
  }
  const AgeRange targets = config.target_age_range.value_or(observed);

  TrainResult result;
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());
  result.checkpoint = options.out_dir / kCheckpointFile;
  result.log_file = options.out_dir / kTrainLogFile;

  const bool resuming = options.resume && std::filesystem::exists(result.checkpoint);
  ModelBundle models = resuming ? load_checkpoint(result.checkpoint, config.profile)
                                : ModelBundle::build(config.profile, config.seed, config.beta_enabled,
                                                     config.residual_enabled);
  if (resuming && (models.residual_enabled != config.residual_enabled ||
                   models.pat->beta_enabled() != config.beta_enabled)) {
    throw ConfigError("checkpoint flags differ from the configuration being resumed");
  }
  Trainer trainer(models, config);
  const OptimizerRefs refs{&trainer.generator_optimizer(), &trainer.discriminator_optimizer()};
  if (resuming) load_optimizer_state(result.checkpoint, refs);
  const std::int64_t start_epoch = trainer.models().epoch;

  if (resuming) result.log = read_log_before(result.log_file, start_epoch);
  {
    std::ofstream log(result.log_file, std::ios::trunc);
    if (!log) throw IoError("cannot write " + result.log_file.string());
    for (const auto& r : result.log) log << format_log_record(r) << "\n";
  }
  std::ofstream log(result.log_file, std::ios::app);

  if (!resuming) save_checkpoint(result.checkpoint, trainer.models(), refs);

  std::vector<std::int64_t> ages(static_cast<std::size_t>(data.size()));
  for (std::int64_t i = 0; i < data.size(); ++i) ages[static_cast<std::size_t>(i)] = data.ages[i].item<std::int64_t>();
  const AgeIndex index(ages);

  for (std::int64_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    trainer.set_lr(lr);
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::vector<std::int64_t> order(ages.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::int64_t> items(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = make_batch(data, index, items, targets,
                                    config.d_near_target ? std::optional(config.d_sample_window) : std::nullopt, rng);
      StepRecord record;
      record.losses = trainer.discriminator_step(batch);
      record.losses.merge(trainer.generator_step(batch));
      record.step = trainer.models().step++;
      record.epoch = epoch;
      record.lr = lr;
      log << format_log_record(record) << "\n" << std::flush;
      if (options.on_step) options.on_step(record);
      result.log.push_back(std::move(record));
      if (options.max_steps && trainer.models().step >= *options.max_steps) {
        result.models = trainer.models();
        return result;
      }
    }
    trainer.models().epoch = epoch + 1;
    save_checkpoint(result.checkpoint, trainer.models(), refs);
    if (options.on_epoch_end) options.on_epoch_end(epoch, trainer.models());
  }
  result.models = trainer.models();
  return result;
}

}  // namespace aging
