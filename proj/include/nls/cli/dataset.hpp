#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nls/cli/config.hpp"
#include "nls/core/png.hpp"
#include "nls/features/dense_map.hpp"
#include "nls/scenes/scene.hpp"

namespace nls::cli {

/// One generated scene and its identity in the dataset.
struct SceneRecord {
  std::string id;
  std::uint64_t seed = 0;
  scenes::SceneSample sample;
};

inline constexpr std::uint64_t kTrainTag = 0x747261696eULL;
inline constexpr std::uint64_t kTestTag = 0x74657374ULL;
inline constexpr std::uint64_t kStyleTag = 0x7374796c65ULL;
inline constexpr std::uint64_t kProbeTag = 0x70726f6265ULL;

/// Seeded multinomial draw over the (normalized) style weights.
inline std::vector<scenes::StyleTag> draw_styles(const std::map<std::string, double>& mix, int count,
                                                 std::uint64_t seed) {
  std::vector<std::pair<scenes::StyleTag, double>> cumulative;
  double total = 0;
  for (const auto& [name, weight] : mix) {
    total += weight;
    cumulative.emplace_back(scenes::parse_style(name), total);
  }
  Rng rng(derive_seed({seed, kStyleTag}));
  std::uniform_real_distribution<double> unit(0.0, total);
  std::vector<scenes::StyleTag> out;
  for (int i = 0; i < count; ++i) {
    const double u = unit(rng);
    auto it = std::find_if(cumulative.begin(), cumulative.end(), [&](const auto& c) { return u < c.second; });
    out.push_back(it == cumulative.end() ? cumulative.back().first : it->first);
  }
  return out;
}

inline std::vector<SceneRecord> generate_split(const RunConfig& config, const std::string& split, int count) {
  const std::uint64_t tag = split == "train" ? kTrainTag : kTestTag;
  const auto styles = draw_styles(config.dataset.style_mix, count, derive_seed({config.seed, tag}));
  std::vector<SceneRecord> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = derive_seed({config.seed, tag, static_cast<std::uint64_t>(i)});
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), i);
    const auto spec = scenes::generate_scene(seed, config.dataset.scene);
    out.push_back({id, seed, scenes::render_scene(spec, config.dataset.resolution, styles[static_cast<std::size_t>(i)])});
  }
  return out;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

/// Rows of a CSV file with the expected header, header excluded.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": expected header '" + header + "'");
  const auto width = csv_split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = csv_split(line);
    if (row.size() != width) throw FormatError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline features::DenseFeatureMap depth_as_features(const DepthMap& depth) {
  features::DenseFeatureMap m(depth.height, depth.width, 1, 1, "depth");
  m.values = depth.values;
  return m;
}

}  // namespace detail

inline constexpr char kDatasetHeader[] = "id,caption,style_tag,seed";

/// <id>.png, <id>_semantic.png (indexed), <id>_depth.nlfm and manifest.csv.
inline void write_split(const std::filesystem::path& dir, const std::vector<SceneRecord>& records) {
  std::filesystem::create_directories(dir);
  std::string manifest = std::string(kDatasetHeader) + "\n";
  for (const auto& r : records) {
    png::write_rgb(dir / (r.id + ".png"), r.sample.image);
    png::write_indexed(dir / (r.id + "_semantic.png"), r.sample.semantic_map, scenes::kClassPalette);
    features::export_features(detail::depth_as_features(r.sample.depth_map), dir / (r.id + "_depth.nlfm"));
    manifest += r.id + "," + detail::csv_field(r.sample.caption) + "," + std::string(scenes::style_name(r.sample.style_tag)) +
                "," + std::to_string(r.seed) + "\n";
  }
  io::write_file(dir / "manifest.csv", manifest);
}

inline std::vector<SceneRecord> load_split(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.csv";
  if (!std::filesystem::exists(manifest)) {
    throw ResolutionError("dataset split " + dir.string() + " not found; run `make-dataset` first");
  }
  std::vector<SceneRecord> out;
  for (const auto& row : detail::read_csv(manifest, kDatasetHeader)) {
    SceneRecord r;
    r.id = row[0];
    r.seed = std::stoull(row[3]);
    r.sample.caption = row[1];
    r.sample.style_tag = scenes::parse_style(row[2]);
    r.sample.image = png::read_rgb(dir / (r.id + ".png"));
    r.sample.semantic_map = png::read_indexed(dir / (r.id + "_semantic.png"));
    const auto depth = features::import_features(dir / (r.id + "_depth.nlfm"));
    if (depth.channels != 1) throw FormatError(r.id + "_depth.nlfm: expected one channel");
    r.sample.depth_map = DepthMap(depth.width_patches, depth.height_patches);
    r.sample.depth_map.values = depth.values;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ParameterError("dataset split " + dir.string() + " is empty");
  return out;
}

}  // namespace nls::cli
