#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "aging/errors.hpp"
#include "aging/training.hpp"

namespace aging {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true/false or on/off, got '" + v + "'");
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  try {
    profile.validate();
  } catch (const ConfigError& e) {
    problems.emplace_back(e.what());
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) problems.emplace_back("lr must be > 0");
  if (batch_size < 1) problems.emplace_back("batch_size must be >= 1");
  if (epochs < 0) problems.emplace_back("epochs must be >= 0");
  if (decay_start_epoch < 0 || decay_start_epoch > epochs) {
    problems.emplace_back("decay_start_epoch must lie in [0, epochs]");
  }
  if (d_sample_window < 0) problems.emplace_back("d_sample_window must be >= 0");
  if (target_age_range) {
    const auto [lo, hi] = *target_age_range;
    if (lo > hi || lo < 0 || hi > profile.num_classes - 1) {
      problems.emplace_back("target_age_range must satisfy 0 <= lo <= hi <= K-1");
    }
  }
  try {
    weights.validate();
  } catch (const ConfigError& e) {
    problems.emplace_back(e.what());
  }
  if (problems.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  static const std::map<std::string, double LossWeights::*> weight_keys = {
      {"lambda_mv1", &LossWeights::lambda_mv1},     {"lambda_mv2", &LossWeights::lambda_mv2},
      {"lambda_fake1", &LossWeights::lambda_fake1}, {"lambda_fake2", &LossWeights::lambda_fake2},
      {"lambda_age", &LossWeights::lambda_age},     {"lambda_idt", &LossWeights::lambda_idt},
      {"lambda_adv", &LossWeights::lambda_adv}};
  if (auto it = weight_keys.find(key); it != weight_keys.end()) {
    c.weights.*(it->second) = parse_real(key, v);
  } else if (key == "profile") {
    c.profile = SizeProfile::named(v);
  } else if (key == "batch_size") {
    c.batch_size = parse_int(key, v);
  } else if (key == "epochs") {
    c.epochs = parse_int(key, v);
  } else if (key == "lr") {
    c.lr = parse_real(key, v);
  } else if (key == "decay_start_epoch") {
    c.decay_start_epoch = parse_int(key, v);
  } else if (key == "seed") {
    const auto s = parse_int(key, v);
    if (s < 0) throw ConfigError("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "target_age_range") {
    if (v == "auto") {
      c.target_age_range.reset();
    } else {
      const auto comma = v.find(',');
      if (comma == std::string::npos) throw ConfigError("target_age_range: expected 'lo,hi' or 'auto'");
      c.target_age_range = AgeRange{parse_int(key, trim(v.substr(0, comma))), parse_int(key, trim(v.substr(comma + 1)))};
    }
  } else if (key == "d_sample_window") {
    c.d_sample_window = parse_int(key, v);
  } else if (key == "d_near_target") {
    c.d_near_target = parse_flag(key, v);
  } else if (key == "beta_enabled") {
    c.beta_enabled = parse_flag(key, v);
  } else if (key == "residual_enabled") {
    c.residual_enabled = parse_flag(key, v);
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "profile = " << c.profile.name() << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n"
     << "lr = " << format_real(c.lr) << "\n"
     << "decay_start_epoch = " << c.decay_start_epoch << "\n"
     << "lambda_mv1 = " << format_real(c.weights.lambda_mv1) << "\n"
     << "lambda_mv2 = " << format_real(c.weights.lambda_mv2) << "\n"
     << "lambda_fake1 = " << format_real(c.weights.lambda_fake1) << "\n"
     << "lambda_fake2 = " << format_real(c.weights.lambda_fake2) << "\n"
     << "lambda_age = " << format_real(c.weights.lambda_age) << "\n"
     << "lambda_idt = " << format_real(c.weights.lambda_idt) << "\n"
     << "lambda_adv = " << format_real(c.weights.lambda_adv) << "\n"
     << "seed = " << c.seed << "\n"
     << "target_age_range = ";
  if (c.target_age_range) {
    os << c.target_age_range->lo << "," << c.target_age_range->hi;
  } else {
    os << "auto";
  }
  os << "\n"
     << "d_sample_window = " << c.d_sample_window << "\n"
     << "d_near_target = " << (c.d_near_target ? "true" : "false") << "\n"
     << "beta_enabled = " << (c.beta_enabled ? "true" : "false") << "\n"
     << "residual_enabled = " << (c.residual_enabled ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace aging
