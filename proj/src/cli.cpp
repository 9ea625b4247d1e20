#include "aging/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "aging/checkpoint.hpp"
#include "aging/errors.hpp"
#include "aging/evaluation.hpp"
#include "aging/reports.hpp"
#include "aging/training.hpp"

namespace aging::cli {
namespace {

namespace fs = std::filesystem;

const std::vector<double> kSampleTargets = {25, 35, 45, 55};
constexpr std::int64_t kSampleImages = 6;

struct Flags {
  // shared
  std::string out;
  std::string config;
  std::string manifest;
  std::string checkpoint;
  std::string image;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> residual;
  std::optional<std::int64_t> epochs;
  std::vector<std::string> overrides;
  bool resume = false;
  // synth-data
  std::int64_t identities = 200;
  std::int64_t per_identity = 8;
  // infer / sweep / eval
  std::optional<double> target_age;
  std::int64_t lo = 20;
  std::int64_t hi = 64;
  std::int64_t step = 4;
  std::string suite;
  std::string estimator = "embedded";
  std::string generated_manifest;
  std::int64_t frames = 8;
};

AgeEstimator parse_estimator(const std::string& name) {
  return name == "oracle" ? AgeEstimator::kOracle : AgeEstimator::kEmbedded;
}

// Effective training configuration: defaults, then the profile flag, then the
// config file, then --set overrides, then dedicated flags.
TrainConfig resolve_config(const Flags& f) {
  TrainConfig c;
  if (f.profile) c.profile = SizeProfile::named(*f.profile);
  if (!f.config.empty()) c = load_config(f.config, c);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.profile) c.profile = SizeProfile::named(*f.profile);
  if (f.seed) c.seed = *f.seed;
  if (f.epochs) {
    c.epochs = *f.epochs;
    c.decay_start_epoch = std::min(c.decay_start_epoch, c.epochs);
  }
  if (f.residual) c.residual_enabled = *f.residual == "on";
  c.validate();
  return c;
}

void require_manifest(const std::string& manifest) {
  if (manifest.empty()) throw ConfigError("--manifest is required");
  if (!fs::exists(manifest)) throw ConfigError("manifest not found: " + manifest);
}

void ensure_dir(const fs::path& dir, std::ostream& out) {
  if (fs::exists(dir)) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  out << "created " << dir.string() << "\n";
}

void ensure_parent(const fs::path& file, std::ostream& out) {
  if (file.has_parent_path()) ensure_dir(file.parent_path(), out);
}

std::string age_label(double t) {
  char buf[32];
  if (t == std::floor(t)) {
    std::snprintf(buf, sizeof(buf), "%.0f", t);
  } else {
    std::snprintf(buf, sizeof(buf), "%.1f", t);
  }
  return buf;
}

// ---- commands -----------------------------------------------------------------------

int cmd_synth_data(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  if (f.identities < 1 || f.per_identity < 1) throw ConfigError("--identities and --per-identity must be >= 1");
  const auto profile = SizeProfile::named(f.profile.value_or("desk"));
  if (f.per_identity > static_cast<std::int64_t>(kSyntheticMaxAge - kSyntheticMinAge) + 1) {
    throw ConfigError("--per-identity exceeds the number of distinct synthetic ages");
  }
  ensure_dir(f.out, out);
  const auto ds = build_synthetic_dataset(f.out, f.identities, f.per_identity, profile, f.seed.value_or(0));
  out << ds.manifest.string() << "\n";
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  require_manifest(f.manifest);
  const auto config = resolve_config(f);
  const auto entries = load_manifest(f.manifest);
  for (const auto& e : entries) {
    if (!fs::exists(resolve_entry(f.manifest, e))) throw ConfigError("manifest lists a missing image: " + e.path);
    if (e.age > config.profile.num_classes - 1) throw ConfigError("manifest age " + std::to_string(e.age) + " exceeds K-1");
  }
  const auto train_set = load_training_set(f.manifest, Split::kTrain, config.profile);
  auto samples = filter_split(entries, Split::kTest);
  if (samples.empty()) samples = train_set.entries;
  if (static_cast<std::int64_t>(samples.size()) > kSampleImages) samples.resize(kSampleImages);
  std::vector<torch::Tensor> sample_images;
  for (const auto& e : samples) sample_images.push_back(load_image(resolve_entry(f.manifest, e), config.profile));
  const auto sample_batch = torch::stack(sample_images);

  const fs::path dir = f.out;
  ensure_dir(dir / "samples", out);
  write_text(dir / "config.txt", format_config(config));

  TrainOptions options;
  options.out_dir = dir;
  options.resume = f.resume;
  options.on_epoch_end = [&](std::int64_t epoch, ModelBundle& models) {
    std::vector<std::vector<torch::Tensor>> rows;
    for (std::int64_t i = 0; i < sample_batch.size(0); ++i) rows.push_back({sample_batch[i]});
    for (double t : kSampleTargets) {
      const auto fakes = age_transform(models, sample_batch, torch::full({sample_batch.size(0)}, t));
      for (std::int64_t i = 0; i < fakes.size(0); ++i) rows[static_cast<std::size_t>(i)].push_back(fakes[i]);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03lld.png", static_cast<long long>(epoch));
    write_png(dir / "samples" / name, render_grid(rows));
    models.train();
  };
  std::int64_t last_epoch = -1;
  options.on_step = [&](const StepRecord& r) {
    if (r.epoch != last_epoch) {
      last_epoch = r.epoch;
      out << "epoch " << r.epoch << " lr " << r.lr << "\n" << std::flush;
    }
  };
  const auto result = train(config, train_set, options);
  out << "checkpoint " << result.checkpoint.string() << "\n";
  out << "log " << result.log_file.string() << "\n";
  return kExitOk;
}

ModelBundle open_checkpoint(const Flags& f) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(f.checkpoint)) throw ConfigError("checkpoint not found: " + f.checkpoint);
  return load_checkpoint(f.checkpoint);
}

torch::Tensor open_image(const Flags& f, const SizeProfile& profile) {
  if (f.image.empty()) throw ConfigError("--image is required");
  if (!fs::exists(f.image)) throw ConfigError("image not found: " + f.image);
  return load_image(f.image, profile);
}

int cmd_infer(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  if (!f.target_age) throw ConfigError("--target-age is required");
  auto models = open_checkpoint(f);
  const auto k = models.profile.num_classes;
  if (!(*f.target_age >= 0.0 && *f.target_age <= static_cast<double>(k - 1))) {
    throw ValidationError("target age " + std::to_string(*f.target_age) + " outside [0, " + std::to_string(k - 1) + "]");
  }
  const auto image = open_image(f, models.profile).unsqueeze(0);
  const auto m = self_estimated_age(models, image).item<double>();
  const auto fake = age_transform(models, image, torch::full({1}, *f.target_age));
  ensure_parent(f.out, out);
  write_png(f.out, tensor_to_image(fake[0]));
  out << "self_estimated_age " << format_number(m) << "\n";
  out << "wrote " << f.out << "\n";
  return kExitOk;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const AgeGrid grid{f.lo, f.hi, f.step};
  grid.validate();
  auto models = open_checkpoint(f);
  if (grid.lo < 0 || grid.hi > models.profile.num_classes - 1) throw ValidationError("sweep grid outside [0, K-1]");
  const auto image = open_image(f, models.profile).unsqueeze(0);
  std::vector<torch::Tensor> frames;
  std::vector<std::string> labels;
  for (auto t : grid.values()) {
    frames.push_back(age_transform(models, image, torch::full({1}, static_cast<double>(t)))[0]);
    labels.push_back(age_label(static_cast<double>(t)));
  }
  ensure_parent(f.out, out);
  write_png(f.out, render_strip(frames, labels));
  out << "frames " << frames.size() << "\n";
  out << "wrote " << f.out << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  require_manifest(f.manifest);
  const AgeGrid grid{f.lo, f.hi, f.step};
  if (f.suite == "confusion") grid.validate();
  if (f.suite == "fid" && !f.generated_manifest.empty()) require_manifest(f.generated_manifest);
  auto models = open_checkpoint(f);
  const auto test = load_training_set(f.manifest, Split::kTest, models.profile);
  const auto estimator = parse_estimator(f.estimator);
  const fs::path dir = f.out;

  if (f.suite == "confusion") {
    if (grid.lo < 15 || grid.hi > 70) throw ValidationError("confusion grid must lie within the anchor range [15, 70]");
    if (models.step == 0) throw ValidationError("models have never been trained (step 0); refusing to evaluate a placeholder");
    ensure_dir(dir, out);
    for (auto mode : {AgingMode::kSelfEstimated, AgingMode::kInterpolated}) {
      const auto cm = continuous_confusion_matrix(models, test.images, grid, mode, estimator);
      const std::string stem = std::string("confusion_") + mode_name(mode);
      write_text(dir / (stem + ".txt"), format_confusion_table(cm));
      write_key_values(dir / (stem + ".kv"), confusion_key_values(cm));
      write_png(dir / (stem + ".png"), render_heatmap(cm));
      out << stem << " overall_mae " << format_number(cm.overall_mean_abs_error()) << "\n";
    }
  } else if (f.suite == "fid") {
    torch::Tensor generated;
    if (!f.generated_manifest.empty()) {
      std::vector<torch::Tensor> imgs;
      // A manifest with a test split contributes only that split, like the real side.
      auto entries = load_manifest(f.generated_manifest);
      if (auto test_only = filter_split(entries, Split::kTest); !test_only.empty()) entries = std::move(test_only);
      for (const auto& e : entries) {
        imgs.push_back(load_image(resolve_entry(f.generated_manifest, e), models.profile));
      }
      generated = torch::stack(imgs);
    } else {
      std::vector<torch::Tensor> parts;
      for (const auto& g : default_age_table_groups()) {
        std::vector<double> t;
        for (std::int64_t i = 0; i < test.size(); ++i) {
          t.push_back(static_cast<double>(group_target_age(test.ages[i].item<std::int64_t>(), g.lo, g.hi)));
        }
        parts.push_back(age_transform(models, test.images, torch::tensor(t).to(test.images.scalar_type())));
      }
      generated = torch::cat(parts);
    }
    const auto extractor = encoder_feature_extractor(models);
    const double value = fid(feature_stats(test.images, extractor), feature_stats(generated, extractor));
    ensure_dir(dir, out);
    write_key_values(dir / "fid.kv", {{"fid", format_number(value)},
                                      {"real_images", std::to_string(test.size())},
                                      {"generated_images", std::to_string(generated.size(0))},
                                      {"features", "encoder_pooled"}});
    out << "fid " << format_number(value) << "\n";
  } else if (f.suite == "age-table") {
    std::vector<std::int64_t> ages;
    for (std::int64_t i = 0; i < test.size(); ++i) ages.push_back(test.ages[i].item<std::int64_t>());
    const auto groups = default_age_table_groups();
    const auto table = mean_age_per_group(models, test.images, ages, groups, estimator);
    ensure_dir(dir, out);
    write_text(dir / "age_table.txt", format_age_table(table, estimator));
    write_key_values(dir / "age_table.kv", age_table_key_values(table));
    out << format_age_table(table, estimator);
  } else if (f.suite == "interp") {
    if (test.size() < 2) throw ValidationError("interpolation needs two test images");
    const double t = f.target_age.value_or(40.0);
    const auto frames = identity_interpolation(models, test.images[0], test.images[1], t, f.frames);
    ensure_dir(dir, out);
    write_png(dir / "interpolation.png", render_strip(frames));
    out << "wrote " << (dir / "interpolation.png").string() << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  require_manifest(f.manifest);
  const auto config = resolve_config(f);
  const AgeGrid grid{f.lo, f.hi, f.step};
  grid.validate();
  const auto train_set = load_training_set(f.manifest, Split::kTrain, config.profile);
  const auto test_set = load_training_set(f.manifest, Split::kTest, config.profile);
  ensure_dir(f.out, out);
  const auto report = ablation_compare(config, train_set, test_set, f.out, grid, parse_estimator(f.estimator));
  const fs::path dir = f.out;
  write_text(dir / "ablation.txt", format_ablation_report(report));
  write_key_values(dir / "ablation.kv", ablation_key_values(report));
  out << format_ablation_report(report);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous face aging with personalized age embeddings"};
  app.require_subcommand(1);
  Flags f;

  const auto add_training_flags = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", f.manifest, "Dataset manifest CSV");
    cmd->add_option("--config", f.config, "key = value configuration file");
    cmd->add_option("--set", f.overrides, "Configuration override key=value (repeatable)");
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--epochs", f.epochs, "Number of epochs");
    cmd->add_option("--profile", f.profile, "Size profile")->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--residual", f.residual, "Residual age embedding")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--out", f.out, "Output directory");
  };
  const auto add_grid_flags = [&](CLI::App* cmd) {
    cmd->add_option("--lo", f.lo, "First target age");
    cmd->add_option("--hi", f.hi, "Last target age");
    cmd->add_option("--step", f.step, "Target age step");
  };
  const auto add_estimator_flag = [&](CLI::App* cmd) {
    cmd->add_option("--estimator", f.estimator, "Age estimator for generated images")
        ->check(CLI::IsMember({"embedded", "oracle"}));
  };

  auto* synth = app.add_subcommand("synth-data", "Render a synthetic face dataset");
  synth->add_option("--out", f.out, "Dataset directory");
  synth->add_option("--identities", f.identities, "Number of identities");
  synth->add_option("--per-identity", f.per_identity, "Distinct ages per identity");
  synth->add_option("--seed", f.seed, "Random seed");
  synth->add_option("--profile", f.profile, "Size profile")->check(CLI::IsMember({"paper", "desk"}));

  auto* train_cmd = app.add_subcommand("train", "Train the aging model");
  add_training_flags(train_cmd);
  train_cmd->add_flag("--resume", f.resume, "Continue from the checkpoint in --out");

  auto* infer = app.add_subcommand("infer", "Age one image");
  infer->add_option("--checkpoint", f.checkpoint, "Trained checkpoint");
  infer->add_option("--image", f.image, "Input image");
  infer->add_option("--target-age", f.target_age, "Target age, fractional allowed");
  infer->add_option("--out", f.out, "Output image");

  auto* sweep = app.add_subcommand("sweep", "Render an image across a grid of target ages");
  sweep->add_option("--checkpoint", f.checkpoint, "Trained checkpoint");
  sweep->add_option("--image", f.image, "Input image");
  sweep->add_option("--out", f.out, "Output strip image");
  add_grid_flags(sweep);

  auto* eval = app.add_subcommand("eval", "Run an evaluation suite");
  eval->add_option("--checkpoint", f.checkpoint, "Trained checkpoint");
  eval->add_option("--manifest", f.manifest, "Dataset manifest; the test split is evaluated");
  eval->add_option("--suite", f.suite, "Evaluation suite")
      ->required()
      ->check(CLI::IsMember({"confusion", "fid", "age-table", "interp"}));
  eval->add_option("--out", f.out, "Report directory");
  eval->add_option("--generated-manifest", f.generated_manifest, "FID: compare against these images instead");
  eval->add_option("--target-age", f.target_age, "Interpolation target age");
  eval->add_option("--frames", f.frames, "Interpolation frames");
  add_grid_flags(eval);
  add_estimator_flag(eval);

  auto* ablate = app.add_subcommand("ablate", "Train and compare residual on/off twins");
  add_training_flags(ablate);
  add_grid_flags(ablate);
  add_estimator_flag(ablate);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  // The confusion grid defaults to 25..65 step 3 rather than the sweep grid.
  if (eval->parsed() && f.suite == "confusion") {
    if (eval->count("--lo") == 0) f.lo = 25;
    if (eval->count("--hi") == 0) f.hi = 65;
    if (eval->count("--step") == 0) f.step = 3;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(f, out);
    if (train_cmd->parsed()) return cmd_train(f, out);
    if (infer->parsed()) return cmd_infer(f, out);
    if (sweep->parsed()) return cmd_sweep(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (ablate->parsed()) return cmd_ablate(f, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace aging::cli
