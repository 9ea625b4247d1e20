#include "aging/checkpoint.hpp"

#include <string>

#include "aging/errors.hpp"

namespace aging {
namespace {

torch::Tensor scalar(std::int64_t v) { return torch::tensor(v, torch::kLong); }

std::int64_t read_int(torch::serialize::InputArchive& in, const std::string& key) {
  torch::Tensor t;
  in.read(key, t);
  return t.item<std::int64_t>();
}

void save_module(torch::serialize::OutputArchive& archive, const std::string& key, const torch::nn::Module& m) {
  torch::serialize::OutputArchive sub;
  m.save(sub);
  archive.write(key, sub);
}

void load_module(torch::serialize::InputArchive& archive, const std::string& key, torch::nn::Module& m) {
  torch::serialize::InputArchive sub;
  archive.read(key, sub);
  m.load(sub);
}

torch::serialize::InputArchive open(const std::filesystem::path& path) {
  torch::serialize::InputArchive in;
  try {
    in.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, const OptimizerRefs& optim) {
  torch::serialize::OutputArchive archive;
  archive.write("version", scalar(bundle.version));
  archive.write("step", scalar(bundle.step));
  archive.write("epoch", scalar(bundle.epoch));
  archive.write("residual_enabled", scalar(bundle.residual_enabled ? 1 : 0));
  archive.write("beta_enabled", scalar(bundle.pat->beta_enabled() ? 1 : 0));
  const auto& p = bundle.profile;
  archive.write("profile", torch::tensor(std::vector<std::int64_t>{p.image_side, p.base_channels, p.encoding_side,
                                                                    p.encoding_channels, p.num_classes,
                                                                    p.discriminator_downsamples}));
  save_module(archive, "encoder", *bundle.encoder);
  save_module(archive, "estimator", *bundle.estimator);
  save_module(archive, "pat", *bundle.pat);
  save_module(archive, "generator", *bundle.generator);
  save_module(archive, "discriminator", *bundle.discriminator);
  archive.write("has_optimizers", scalar(optim.generator && optim.discriminator ? 1 : 0));
  if (optim.generator && optim.discriminator) {
    torch::serialize::OutputArchive g, d;
    optim.generator->save(g);
    optim.discriminator->save(d);
    archive.write("optim_generator", g);
    archive.write("optim_discriminator", d);
  }
  auto tmp = path;
  tmp += ".tmp";
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path, const std::optional<SizeProfile>& expected) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  auto in = open(path);
  const auto version = read_int(in, "version");
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint format version " + std::to_string(version) + " unsupported");
  }
  torch::Tensor pt;
  in.read("profile", pt);
  if (pt.numel() != 6) throw ValidationError("checkpoint profile record is malformed");
  SizeProfile profile{pt[0].item<std::int64_t>(), pt[1].item<std::int64_t>(), pt[2].item<std::int64_t>(),
                      pt[3].item<std::int64_t>(), pt[4].item<std::int64_t>(), pt[5].item<std::int64_t>()};
  if (expected && !(*expected == profile)) {
    throw ValidationError("checkpoint profile " + profile.name() + " does not match requested profile " +
                          expected->name());
  }
  auto bundle = ModelBundle::build(profile, 0, read_int(in, "beta_enabled") != 0, read_int(in, "residual_enabled") != 0);
  load_module(in, "encoder", *bundle.encoder);
  load_module(in, "estimator", *bundle.estimator);
  load_module(in, "pat", *bundle.pat);
  load_module(in, "generator", *bundle.generator);
  load_module(in, "discriminator", *bundle.discriminator);
  bundle.step = read_int(in, "step");
  bundle.epoch = read_int(in, "epoch");
  return bundle;
}

bool load_optimizer_state(const std::filesystem::path& path, const OptimizerRefs& optim) {
  auto in = open(path);
  if (read_int(in, "has_optimizers") == 0) return false;
  if (optim.generator) {
    torch::serialize::InputArchive g;
    in.read("optim_generator", g);
    optim.generator->load(g);
  }
  if (optim.discriminator) {
    torch::serialize::InputArchive d;
    in.read("optim_discriminator", d);
    optim.discriminator->load(d);
  }
  return true;
}

}  // namespace aging
