#include "aging/reports.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aging/errors.hpp"

namespace aging {
namespace {

// 3x5 bitmap glyphs, one row per 3-bit mask (MSB = left column).
const std::array<std::uint8_t, 5>* glyph(char ch) {
  static const std::array<std::array<std::uint8_t, 5>, 12> font = {{
      {7, 5, 5, 5, 7},  // 0
      {2, 6, 2, 2, 7},  // 1
      {7, 1, 7, 4, 7},  // 2
      {7, 1, 7, 1, 7},  // 3
      {5, 5, 7, 1, 1},  // 4
      {7, 4, 7, 1, 7},  // 5
      {7, 4, 7, 5, 7},  // 6
      {7, 1, 1, 1, 1},  // 7
      {7, 5, 7, 5, 7},  // 8
      {7, 5, 7, 1, 7},  // 9
      {0, 0, 0, 0, 2},  // .
      {0, 0, 7, 0, 0},  // -
  }};
  if (ch >= '0' && ch <= '9') return &font[static_cast<std::size_t>(ch - '0')];
  if (ch == '.') return &font[10];
  if (ch == '-') return &font[11];
  return nullptr;
}

void put(Image8& img, std::int64_t x, std::int64_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  auto* p = &img.rgb[static_cast<std::size_t>((y * img.width + x) * 3)];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

void draw_text(Image8& img, const std::string& text, std::int64_t x0, std::int64_t y0, std::int64_t scale) {
  std::int64_t x = x0;
  for (char ch : text) {
    if (const auto* g = glyph(ch)) {
      for (std::int64_t row = 0; row < 5; ++row) {
        for (std::int64_t col = 0; col < 3; ++col) {
          if (((*g)[static_cast<std::size_t>(row)] >> (2 - col)) & 1) {
            for (std::int64_t dy = 0; dy < scale; ++dy) {
              for (std::int64_t dx = 0; dx < scale; ++dx) put(img, x + col * scale + dx, y0 + row * scale + dy, 255, 255, 255);
            }
          }
        }
      }
    }
    x += 4 * scale;
  }
}

void blit(Image8& dst, const Image8& src, std::int64_t x0, std::int64_t y0) {
  for (std::int64_t y = 0; y < src.height; ++y) {
    for (std::int64_t x = 0; x < src.width; ++x) {
      const auto* p = &src.rgb[static_cast<std::size_t>((y * src.width + x) * 3)];
      put(dst, x0 + x, y0 + y, p[0], p[1], p[2]);
    }
  }
}

Image8 blank(std::int64_t w, std::int64_t h) {
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<std::size_t>(w * h * 3), 0);
  return img;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  write_text(path, os.str());
}

const char* mode_name(AgingMode mode) { return mode == AgingMode::kSelfEstimated ? "self_estimated" : "interpolated"; }
const char* estimator_name(AgeEstimator e) { return e == AgeEstimator::kEmbedded ? "embedded" : "oracle"; }

std::string format_confusion_table(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "# continuous aging, mode=" << mode_name(cm.mode) << " estimator=" << estimator_name(cm.estimator)
     << " step=" << cm.step << "\n";
  os << "target  mean_est  mae    unread |";
  for (auto a : cm.ages) os << " " << (a < 10 ? "  " : a < 100 ? " " : "") << a;
  os << "\n";
  for (std::size_t r = 0; r < cm.ages.size(); ++r) {
    char head[64];
    std::snprintf(head, sizeof(head), "%6lld  %8.2f  %5.2f  %6lld |", static_cast<long long>(cm.ages[r]),
                  cm.mean_estimate[r], cm.mean_abs_error[r], static_cast<long long>(cm.unreadable[r]));
    os << head;
    for (auto c : cm.counts[r]) {
      char cell[16];
      std::snprintf(cell, sizeof(cell), " %3lld", static_cast<long long>(c));
      os << cell;
    }
    os << "\n";
  }
  os << "overall_mae " << fixed(cm.overall_mean_abs_error(), 3) << "\n";
  return os.str();
}

KeyValues confusion_key_values(const ConfusionMatrix& cm) {
  KeyValues kv;
  kv.emplace_back("mode", mode_name(cm.mode));
  kv.emplace_back("estimator", estimator_name(cm.estimator));
  kv.emplace_back("step", std::to_string(cm.step));
  kv.emplace_back("overall_mae", format_number(cm.overall_mean_abs_error()));
  for (std::size_t r = 0; r < cm.ages.size(); ++r) {
    const auto key = "target_" + std::to_string(cm.ages[r]);
    kv.emplace_back(key + ".mean_estimate", format_number(cm.mean_estimate[r]));
    kv.emplace_back(key + ".mae", format_number(cm.mean_abs_error[r]));
    kv.emplace_back(key + ".unreadable", std::to_string(cm.unreadable[r]));
    std::string hist;
    for (std::size_t c = 0; c < cm.counts[r].size(); ++c) hist += (c ? "," : "") + std::to_string(cm.counts[r][c]);
    kv.emplace_back(key + ".histogram", hist);
  }
  return kv;
}

Image8 render_heatmap(const ConfusionMatrix& cm, std::int64_t cell) {
  const auto n = static_cast<std::int64_t>(cm.ages.size());
  auto img = blank(n * cell, n * cell);
  for (std::int64_t r = 0; r < n; ++r) {
    std::int64_t total = 0;
    for (auto c : cm.counts[static_cast<std::size_t>(r)]) total += c;
    for (std::int64_t c = 0; c < n; ++c) {
      const double f = total == 0 ? 0.0
                                  : static_cast<double>(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) /
                                        static_cast<double>(total);
      // black -> red -> yellow -> white
      const double s = std::sqrt(f);
      const auto r8 = static_cast<std::uint8_t>(std::lround(255.0 * std::min(1.0, 3.0 * s)));
      const auto g8 = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * s - 1.0, 0.0, 1.0)));
      const auto b8 = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * s - 2.0, 0.0, 1.0)));
      for (std::int64_t y = 0; y < cell; ++y) {
        for (std::int64_t x = 0; x < cell; ++x) put(img, c * cell + x, r * cell + y, r8, g8, b8);
      }
    }
  }
  return img;
}

std::string format_age_table(const std::vector<GroupMean>& table, AgeEstimator estimator) {
  std::ostringstream os;
  os << "# mean generated age per group, estimator=" << estimator_name(estimator) << "\n";
  os << "group      mean_target  mean_estimate  count\n";
  for (const auto& row : table) {
    char line[128];
    std::snprintf(line, sizeof(line), "[%2lld,%3lld)  %11.2f  %13.2f  %5lld\n", static_cast<long long>(row.group.lo),
                  static_cast<long long>(row.group.hi), row.mean_target, row.mean_estimate,
                  static_cast<long long>(row.count));
    os << line;
  }
  return os.str();
}

KeyValues age_table_key_values(const std::vector<GroupMean>& table) {
  KeyValues kv;
  for (const auto& row : table) {
    const auto key = "group_" + std::to_string(row.group.lo) + "_" + std::to_string(row.group.hi);
    kv.emplace_back(key + ".mean_target", format_number(row.mean_target));
    kv.emplace_back(key + ".mean_estimate", format_number(row.mean_estimate));
    kv.emplace_back(key + ".count", std::to_string(row.count));
  }
  return kv;
}

std::string format_ablation_report(const AblationReport& r) {
  std::ostringstream os;
  os << "# residual embedding ablation, estimator=" << estimator_name(r.estimator) << " grid=" << r.grid.lo << ".."
     << r.grid.hi << " step " << r.grid.step << "\n";
  os << "metric                  residual_on  residual_off\n";
  const auto row = [&](const char* name, double a, double b) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s  %11.4f  %12.4f\n", name, a, b);
    os << line;
  };
  row("self_estimated_mae", r.residual.self_estimated_mae, r.direct.self_estimated_mae);
  row("interpolated_mae", r.residual.interpolated_mae, r.direct.interpolated_mae);
  row("identity_distance", r.residual.identity_distance, r.direct.identity_distance);
  row("reconstruction_l1", r.residual.reconstruction_l1, r.direct.reconstruction_l1);
  return os.str();
}

KeyValues ablation_key_values(const AblationReport& r) {
  KeyValues kv;
  kv.emplace_back("estimator", estimator_name(r.estimator));
  for (const auto* arm : {&r.residual, &r.direct}) {
    const std::string p = arm->residual_enabled ? "residual_on." : "residual_off.";
    kv.emplace_back(p + "self_estimated_mae", format_number(arm->self_estimated_mae));
    kv.emplace_back(p + "interpolated_mae", format_number(arm->interpolated_mae));
    kv.emplace_back(p + "identity_distance", format_number(arm->identity_distance));
    kv.emplace_back(p + "reconstruction_l1", format_number(arm->reconstruction_l1));
    kv.emplace_back(p + "checkpoint", arm->checkpoint.string());
  }
  return kv;
}

Image8 render_strip(const std::vector<torch::Tensor>& frames, const std::vector<std::string>& labels) {
  if (frames.empty()) throw ValidationError("cannot render an empty strip");
  if (!labels.empty() && labels.size() != frames.size()) throw ContractError("one label per frame");
  const auto first = tensor_to_image(frames.front());
  const std::int64_t scale = std::max<std::int64_t>(1, first.width / 32);
  const std::int64_t label_h = labels.empty() ? 0 : 7 * scale;
  auto img = blank(first.width * static_cast<std::int64_t>(frames.size()), first.height + label_h);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto frame = tensor_to_image(frames[i]);
    if (frame.width != first.width || frame.height != first.height) throw ContractError("strip frames differ in size");
    const auto x0 = static_cast<std::int64_t>(i) * first.width;
    blit(img, frame, x0, 0);
    if (!labels.empty()) {
      const auto text_w = static_cast<std::int64_t>(labels[i].size()) * 4 * scale;
      draw_text(img, labels[i], x0 + (first.width - text_w) / 2, first.height + scale, scale);
    }
  }
  return img;
}

Image8 render_grid(const std::vector<std::vector<torch::Tensor>>& rows) {
  if (rows.empty() || rows.front().empty()) throw ValidationError("cannot render an empty grid");
  const auto first = tensor_to_image(rows.front().front());
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  auto img = blank(first.width * static_cast<std::int64_t>(cols), first.height * static_cast<std::int64_t>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      blit(img, tensor_to_image(rows[r][c]), static_cast<std::int64_t>(c) * first.width,
           static_cast<std::int64_t>(r) * first.height);
    }
  }
  return img;
}

}  // namespace aging
