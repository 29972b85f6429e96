#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "nls/core/binary_io.hpp"
#include "nls/core/error.hpp"
#include "nls/diffusion/codec.hpp"
#include "nls/eval/report.hpp"
#include "nls/features/extraction.hpp"
#include "nls/pca/projector.hpp"
#include "nls/scenes/scene.hpp"

namespace nls::cli {

using nlohmann::json;

struct DatasetSection {
  int train_size = 256;
  int test_size = 32;
  int resolution = 32;
  scenes::SceneConfig scene;
  std::map<std::string, double> style_mix{{"plain", 1.0}};
};

struct BackboneSection {
  std::string convention = "dino";
  std::uint64_t seed = 1234;
  int patch_size = 4;
  int channels = 32;
  std::string import_dir;  // read <split>/<id>.nlfm feature files instead of running the toy backbone
};

struct PcaSection {
  int sample_count = pca::kDefaultSampleCount;
  int n_components = 10;
};

struct DiffusionSection {
  int steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  double learning_rate = 1e-3;
  int base_epochs = 150;
  int adapter_epochs = 100;
  int batch_size = 16;
  double caption_dropout = 0.1;
  std::array<int, 3> channels{16, 32, 64};
  int caption_dim = 32;
  std::string codec = "identity";
};

struct SamplingSection {
  int layouts = 16;  // first test scenes used as reference layouts
  int samples_per_layout = 8;
  bool unconditional = true;  // also draw base-only samples with the same captions
};

struct EvalSection {
  std::string si_mode = "probe-vs-gt";
  bool frechet = true;
  bool diversity = true;
  std::uint64_t probe_seed = 0;
  int probe_steps = 2500;
  int probe_scenes = 4000;
  int probe_validation = 128;
  std::uint64_t metric_seed = 99;
  int metric_channels = 16;
};

struct AblationSection {
  std::vector<int> components{1, 4, 16};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int adapter_epochs = 60;
  int layouts = 8;
  int samples_per_layout = 4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  DatasetSection dataset;
  BackboneSection backbone;
  PcaSection pca;
  DiffusionSection diffusion;
  SamplingSection sampling;
  EvalSection eval;
  AblationSection ablation;

  void validate() const;
};

inline json to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  const auto& s = d.scene;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset",
       {{"train_size", d.train_size},
        {"test_size", d.test_size},
        {"resolution", d.resolution},
        {"canvas_px", s.canvas_px},
        {"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"min_size", s.min_size},
        {"max_size", s.max_size},
        {"style_mix", d.style_mix}}},
      {"backbone",
       {{"convention", c.backbone.convention},
        {"seed", c.backbone.seed},
        {"patch_size", c.backbone.patch_size},
        {"channels", c.backbone.channels},
        {"import_dir", c.backbone.import_dir}}},
      {"pca", {{"sample_count", c.pca.sample_count}, {"n_components", c.pca.n_components}}},
      {"diffusion",
       {{"steps", c.diffusion.steps},
        {"beta_min", c.diffusion.beta_min},
        {"beta_max", c.diffusion.beta_max},
        {"learning_rate", c.diffusion.learning_rate},
        {"base_epochs", c.diffusion.base_epochs},
        {"adapter_epochs", c.diffusion.adapter_epochs},
        {"batch_size", c.diffusion.batch_size},
        {"caption_dropout", c.diffusion.caption_dropout},
        {"channels", c.diffusion.channels},
        {"caption_dim", c.diffusion.caption_dim},
        {"codec", c.diffusion.codec}}},
      {"sampling",
       {{"layouts", c.sampling.layouts},
        {"samples_per_layout", c.sampling.samples_per_layout},
        {"unconditional", c.sampling.unconditional}}},
      {"eval",
       {{"si_mode", c.eval.si_mode},
        {"frechet", c.eval.frechet},
        {"diversity", c.eval.diversity},
        {"probe_seed", c.eval.probe_seed},
        {"probe_steps", c.eval.probe_steps},
        {"probe_scenes", c.eval.probe_scenes},
        {"probe_validation", c.eval.probe_validation},
        {"metric_seed", c.eval.metric_seed},
        {"metric_channels", c.eval.metric_channels}}},
      {"ablation",
       {{"components", c.ablation.components},
        {"seeds", c.ablation.seeds},
        {"adapter_epochs", c.ablation.adapter_epochs},
        {"layouts", c.ablation.layouts},
        {"samples_per_layout", c.ablation.samples_per_layout}}},
  };
}

namespace detail {

// Every key in `given` must exist in `reference` (the defaults).
inline void check_keys(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ConfigurationError("unknown config key '" + path + "'");
    if (key != "style_mix") check_keys(value, reference.at(key), path);
  }
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  detail::check_keys(j, to_json(RunConfig{}), "");
  json merged = to_json(RunConfig{});
  merged.merge_patch(j);
  if (j.contains("dataset") && j["dataset"].contains("style_mix")) merged["dataset"]["style_mix"] = j["dataset"]["style_mix"];
  RunConfig c;
  try {
    c.seed = merged.at("seed");
    c.output_dir = merged.at("output_dir");
    const auto& d = merged.at("dataset");
    c.dataset.train_size = d.at("train_size");
    c.dataset.test_size = d.at("test_size");
    c.dataset.resolution = d.at("resolution");
    c.dataset.scene.canvas_px = d.at("canvas_px");
    c.dataset.scene.min_objects = d.at("min_objects");
    c.dataset.scene.max_objects = d.at("max_objects");
    c.dataset.scene.min_size = d.at("min_size");
    c.dataset.scene.max_size = d.at("max_size");
    c.dataset.style_mix = d.at("style_mix").get<std::map<std::string, double>>();
    const auto& b = merged.at("backbone");
    c.backbone.convention = b.at("convention");
    c.backbone.seed = b.at("seed");
    c.backbone.patch_size = b.at("patch_size");
    c.backbone.channels = b.at("channels");
    c.backbone.import_dir = b.at("import_dir");
    c.pca.sample_count = merged.at("pca").at("sample_count");
    c.pca.n_components = merged.at("pca").at("n_components");
    const auto& df = merged.at("diffusion");
    c.diffusion.steps = df.at("steps");
    c.diffusion.beta_min = df.at("beta_min");
    c.diffusion.beta_max = df.at("beta_max");
    c.diffusion.learning_rate = df.at("learning_rate");
    c.diffusion.base_epochs = df.at("base_epochs");
    c.diffusion.adapter_epochs = df.at("adapter_epochs");
    c.diffusion.batch_size = df.at("batch_size");
    c.diffusion.caption_dropout = df.at("caption_dropout");
    c.diffusion.channels = df.at("channels").get<std::array<int, 3>>();
    c.diffusion.caption_dim = df.at("caption_dim");
    c.diffusion.codec = df.at("codec");
    const auto& sm = merged.at("sampling");
    c.sampling.layouts = sm.at("layouts");
    c.sampling.samples_per_layout = sm.at("samples_per_layout");
    c.sampling.unconditional = sm.at("unconditional");
    const auto& e = merged.at("eval");
    c.eval.si_mode = e.at("si_mode");
    c.eval.frechet = e.at("frechet");
    c.eval.diversity = e.at("diversity");
    c.eval.probe_seed = e.at("probe_seed");
    c.eval.probe_steps = e.at("probe_steps");
    c.eval.probe_scenes = e.at("probe_scenes");
    c.eval.probe_validation = e.at("probe_validation");
    c.eval.metric_seed = e.at("metric_seed");
    c.eval.metric_channels = e.at("metric_channels");
    const auto& a = merged.at("ablation");
    c.ablation.components = a.at("components").get<std::vector<int>>();
    c.ablation.seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
    c.ablation.adapter_epochs = a.at("adapter_epochs");
    c.ablation.layouts = a.at("layouts");
    c.ablation.samples_per_layout = a.at("samples_per_layout");
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  return c;
}

inline void RunConfig::validate() const {
  if (dataset.train_size < 2 || dataset.test_size < 1) throw ConfigurationError("dataset sizes too small");
  if (dataset.resolution < 16 || dataset.resolution % 4 != 0) {
    throw ConfigurationError("dataset.resolution must be >= 16 and divisible by 4");
  }
  dataset.scene.validate();
  if (dataset.style_mix.empty()) throw ConfigurationError("dataset.style_mix must not be empty");
  double total = 0;
  for (const auto& [name, weight] : dataset.style_mix) {
    scenes::parse_style(name);
    if (!(weight >= 0)) throw ConfigurationError("style weight for '" + name + "' must be non-negative");
    total += weight;
  }
  if (!(total > 0)) throw ConfigurationError("dataset.style_mix weights sum to zero");
  const auto convention = features::conventions::by_name(backbone.convention);
  convention.validate();
  if (backbone.patch_size <= 0 || dataset.resolution % backbone.patch_size != 0) {
    throw ConfigurationError("backbone.patch_size must divide dataset.resolution");
  }
  if (!backbone.import_dir.empty() && !std::filesystem::is_directory(backbone.import_dir)) {
    throw ConfigurationError("backbone.import_dir '" + backbone.import_dir + "' does not exist");
  }
  const int feature_channels = convention.concat_layers
                                   ? backbone.channels * static_cast<int>(convention.layer_selector.size())
                                   : backbone.channels;
  if (backbone.import_dir.empty() && (pca.n_components < 1 || pca.n_components > feature_channels)) {
    throw ConfigurationError("pca.n_components must lie in [1, " + std::to_string(feature_channels) +
                             "] for this backbone, got " + std::to_string(pca.n_components));
  }
  if (pca.sample_count <= 0) throw ConfigurationError("pca.sample_count must be positive");

  const auto& df = diffusion;
  if (df.steps < 2) throw ConfigurationError("diffusion.steps must be >= 2");
  if (!(df.beta_min > 0 && df.beta_min <= df.beta_max && df.beta_max < 1)) {
    throw ConfigurationError("diffusion betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  if (!(df.learning_rate > 0) || df.base_epochs <= 0 || df.adapter_epochs <= 0 || df.batch_size <= 0) {
    throw ConfigurationError("diffusion learning_rate, epochs and batch_size must be positive");
  }
  if (df.caption_dropout < 0 || df.caption_dropout > 1) throw ConfigurationError("diffusion.caption_dropout must lie in [0, 1]");
  const auto codec = diffusion::parse_codec(df.codec);
  if (dataset.resolution % codec.factor != 0 || (dataset.resolution / codec.factor) % 4 != 0) {
    throw ConfigurationError("latent side (resolution / codec factor) must be a multiple of 4");
  }
  if (df.caption_dim <= 0) throw ConfigurationError("diffusion.caption_dim must be positive");

  if (sampling.layouts < 1 || sampling.layouts > dataset.test_size) {
    throw ConfigurationError("sampling.layouts must lie in [1, dataset.test_size]");
  }
  if (sampling.samples_per_layout < 1) throw ConfigurationError("sampling.samples_per_layout must be positive");

  eval::parse_si_mode(eval.si_mode);
  if (eval.probe_steps <= 0 || eval.probe_scenes <= 0 || eval.probe_validation <= 0) {
    throw ConfigurationError("eval probe sizes must be positive");
  }
  if (eval.metric_channels < 1 || eval.metric_channels > 64) throw ConfigurationError("eval.metric_channels must lie in [1, 64]");

  if (ablation.seeds.empty()) throw ConfigurationError("ablation.seeds must not be empty");
  for (std::size_t i = 0; i < ablation.components.size(); ++i) {
    const int n = ablation.components[i];
    if (n < 1 || (i && n <= ablation.components[i - 1])) {
      throw ConfigurationError("ablation.components must be positive and strictly ascending");
    }
    if (backbone.import_dir.empty() && n > feature_channels) {
      throw ConfigurationError("ablation component count " + std::to_string(n) + " exceeds the feature width");
    }
  }
  if (ablation.adapter_epochs <= 0 || ablation.layouts < 1 || ablation.layouts > dataset.test_size ||
      ablation.samples_per_layout < 1) {
    throw ConfigurationError("ablation epochs, layouts and samples_per_layout are out of range");
  }
}

/// Applies "section.key=value" overrides; the value is parsed as JSON and
/// falls back to a plain string.
inline RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  json j = to_json(config);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigurationError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), text = item.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json::json_pointer ptr("/" + [&] {
      std::string p = key;
      std::replace(p.begin(), p.end(), '.', '/');
      return p;
    }());
    if (!j.contains(ptr)) throw ConfigurationError("unknown config key '" + key + "'");
    j[ptr] = value;
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ResolutionError("config file " + path.string() + " not found");
  const auto parsed = json::parse(io::read_file(path), nullptr, false);
  if (parsed.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
  return config_from_json(parsed);
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

/// Content hash of everything that shapes the artifacts (the output
/// location is excluded).
inline std::string fingerprint(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

}  // namespace nls::cli
