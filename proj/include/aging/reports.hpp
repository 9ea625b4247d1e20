#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "aging/data.hpp"
#include "aging/evaluation.hpp"

namespace aging {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// One `key=value` per line.
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string format_number(double v);

const char* mode_name(AgingMode mode);
const char* estimator_name(AgeEstimator estimator);

std::string format_confusion_table(const ConfusionMatrix& cm);
KeyValues confusion_key_values(const ConfusionMatrix& cm);
// Row-normalized counts as a heat-colored image, one square cell per
// (target, estimate) pair; rows run top to bottom in target order.
Image8 render_heatmap(const ConfusionMatrix& cm, std::int64_t cell = 12);

std::string format_age_table(const std::vector<GroupMean>& table, AgeEstimator estimator);
KeyValues age_table_key_values(const std::vector<GroupMean>& table);

std::string format_ablation_report(const AblationReport& report);
KeyValues ablation_key_values(const AblationReport& report);

// Frames (3, S, S) side by side, each with an optional numeric label underneath.
Image8 render_strip(const std::vector<torch::Tensor>& frames, const std::vector<std::string>& labels = {});
// Rows of equally sized frames.
Image8 render_grid(const std::vector<std::vector<torch::Tensor>>& rows);

}  // namespace aging
