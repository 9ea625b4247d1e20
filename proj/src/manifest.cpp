#include <charconv>
#include <fstream>
#include <sstream>

#include "aging/data.hpp"
#include "aging/errors.hpp"

namespace aging {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw ValidationError(path.string() + ":1: expected header '" + std::string(kManifestHeader) + "'");
  }
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_fields(trim(line));
    if (fields.size() != 4) throw ValidationError(where + "expected 4 comma-separated fields");
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.empty()) throw ValidationError(where + "empty path");
    const auto& age = fields[1];
    auto [ptr, ec] = std::from_chars(age.data(), age.data() + age.size(), e.age);
    if (ec != std::errc{} || ptr != age.data() + age.size()) throw ValidationError(where + "age is not an integer");
    if (e.age < 0 || e.age > kMaxManifestAge) {
      throw ValidationError(where + "age " + std::to_string(e.age) + " outside [0, 99]");
    }
    e.gender = fields[2];
    if (fields[3] == "train") {
      e.split = Split::kTrain;
    } else if (fields[3] == "test") {
      e.split = Split::kTest;
    } else {
      throw ValidationError(where + "split must be train or test");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& e : entries) {
    out << e.path << ',' << e.age << ',' << e.gender << ',' << split_name(e.split) << '\n';
  }
  if (!out) throw IoError("cannot write manifest " + path.string());
}

std::filesystem::path resolve_entry(const std::filesystem::path& manifest, const ManifestEntry& entry) {
  std::filesystem::path p(entry.path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

}  // namespace aging
