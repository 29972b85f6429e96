#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nls/cli/config.hpp"
#include "nls/cli/dataset.hpp"
#include "nls/diffusion/checkpoint.hpp"
#include "nls/diffusion/sample.hpp"
#include "nls/diffusion/train.hpp"
#include "nls/eval/ablation.hpp"
#include "nls/features/toy_backbone.hpp"
#include "nls/layout/neural_layout.hpp"

namespace nls::cli {

using Log = std::function<void(const std::string&)>;

inline constexpr std::uint64_t kProjectorTag = 0x70636100ULL;
inline constexpr std::uint64_t kCaptionTag = 0xca9710ULL;
inline constexpr std::uint64_t kBaseTag = 0xba5eULL;
inline constexpr std::uint64_t kAdapterTag = 0xada97ULL;
inline constexpr std::uint64_t kSampleTag = 0x5a3b1eULL;

/// Dense features of dataset images: the configured toy backbone, or feature
/// files under <import_dir>/<split>/<id>.nlfm.
class FeatureSource {
 public:
  explicit FeatureSource(const RunConfig& config)
      : convention_(features::conventions::by_name(config.backbone.convention)),
        import_dir_(config.backbone.import_dir) {
    if (import_dir_.empty()) {
      backbone_ = std::make_unique<features::ToyBackbone>(features::conventions::toy_spec_for(
          convention_, config.backbone.seed, config.backbone.patch_size, config.backbone.channels));
    }
  }

  features::DenseFeatureMap operator()(const std::string& split, const SceneRecord& record) const {
    if (backbone_) return features::extract_dense_features(record.sample.image, convention_, *backbone_);
    const auto path = import_dir_ / split / (record.id + ".nlfm");
    if (!std::filesystem::exists(path)) throw ResolutionError("imported feature file " + path.string() + " is missing");
    return features::import_features(path);
  }

  /// Features of an image outside the dataset (toy backbone only).
  features::DenseFeatureMap operator()(const Image& image) const {
    if (!backbone_) throw UnavailableFeatureError("imported features cover dataset images only");
    return features::extract_dense_features(image, convention_, *backbone_);
  }

 private:
  features::BackboneConvention convention_;
  std::filesystem::path import_dir_;
  std::unique_ptr<features::ToyBackbone> backbone_;
};

inline std::vector<features::DenseFeatureMap> dataset_features(const FeatureSource& source, const std::string& split,
                                                               const std::vector<SceneRecord>& records) {
  std::vector<features::DenseFeatureMap> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(source(split, r));
  return out;
}

inline pca::PcaProjector fit_projector(const RunConfig& config, const std::vector<features::DenseFeatureMap>& maps,
                                       int n_components, std::uint64_t seed, const Log& log = {}) {
  const auto sample = pca::sample_feature_vectors(maps, config.pca.sample_count, derive_seed({seed, kProjectorTag}));
  if (sample.warning && log) log("warning: " + *sample.warning);
  return pca::fit_pca(sample.vectors, n_components, derive_seed({seed, kProjectorTag, 1}), maps.front().source_id);
}

inline layout::LayoutGrid raw_layout_of(const features::DenseFeatureMap& map, const pca::PcaProjector& projector,
                                        int resolution) {
  if (map.source_id != projector.source_id) {
    throw ConsistencyError("projector was fitted on '" + projector.source_id + "' but the features come from '" +
                           map.source_id + "'");
  }
  return layout::upsample_nearest(pca::project(map, projector), resolution, resolution);
}

struct LayoutSet {
  std::vector<layout::ChannelStats> stats;
  std::vector<layout::NeuralLayout> train;
  std::vector<layout::NeuralLayout> test;
};

/// Normalization statistics come from the training split only and are
/// reused for the test split.
inline LayoutSet build_layouts(const pca::PcaProjector& projector, const std::vector<features::DenseFeatureMap>& train,
                               const std::vector<features::DenseFeatureMap>& test, int resolution) {
  std::vector<layout::LayoutGrid> raw_train;
  for (const auto& m : train) raw_train.push_back(raw_layout_of(m, projector, resolution));
  LayoutSet out;
  out.stats = layout::compute_layout_stats(raw_train);
  for (const auto& g : raw_train) out.train.push_back(layout::make_layout(layout::normalize_layout(g, out.stats), out.stats, projector.id()));
  for (const auto& m : test) {
    out.test.push_back(layout::make_layout(layout::normalize_layout(raw_layout_of(m, projector, resolution), out.stats),
                                           out.stats, projector.id()));
  }
  return out;
}

inline diffusion::CaptionEncoder caption_encoder(const RunConfig& config) {
  return diffusion::CaptionEncoder(config.diffusion.caption_dim, derive_seed({config.seed, kCaptionTag}));
}

inline diffusion::DenoiserConfig denoiser_config(const RunConfig& config) {
  const auto codec = diffusion::parse_codec(config.diffusion.codec);
  diffusion::DenoiserConfig d;
  d.resolution = codec.latent_size(config.dataset.resolution);
  d.channels = config.diffusion.channels;
  d.caption_dim = config.diffusion.caption_dim;
  d.steps = config.diffusion.steps;
  d.seed = derive_seed({config.seed, kBaseTag});
  return d;
}

inline diffusion::NoiseSchedule schedule_of(const RunConfig& config) {
  return diffusion::make_schedule(config.diffusion.steps, config.diffusion.beta_min, config.diffusion.beta_max);
}

inline diffusion::DiffusionData diffusion_data(const RunConfig& config, const std::vector<SceneRecord>& records,
                                               const std::vector<layout::NeuralLayout>& layouts) {
  std::vector<Image> images;
  std::vector<std::string> captions;
  for (const auto& r : records) {
    images.push_back(r.sample.image);
    captions.push_back(r.sample.caption);
  }
  return diffusion::make_diffusion_data(images, captions, layouts, caption_encoder(config),
                                        diffusion::parse_codec(config.diffusion.codec));
}

inline diffusion::ProgressFn progress_logger(const Log& log, const std::string& what) {
  if (!log) return {};
  return [log, what](int step, int total, double loss) {
    if (step == 1 || step % 200 == 0 || step == total) {
      log(what + " step " + std::to_string(step) + "/" + std::to_string(total) + " loss " + std::to_string(loss));
    }
  };
}

inline diffusion::TrainResult train_base(const RunConfig& config, diffusion::Denoiser<float>& base,
                                         const diffusion::DiffusionData& data, const Log& log = {}) {
  diffusion::TrainConfig tc;
  tc.mode = diffusion::TrainMode::kBase;
  tc.epochs = config.diffusion.base_epochs;
  tc.batch_size = config.diffusion.batch_size;
  tc.learning_rate = config.diffusion.learning_rate;
  tc.caption_dropout = config.diffusion.caption_dropout;
  tc.seed = derive_seed({config.seed, kBaseTag, 1});
  return diffusion::train(base, nullptr, data, schedule_of(config), tc, progress_logger(log, "base"));
}

/// Adapter training on a frozen base.
inline diffusion::TrainResult train_adapter(const RunConfig& config, diffusion::Denoiser<float>& base,
                                            diffusion::Adapter<float>& adapter, const diffusion::DiffusionData& data,
                                            int epochs, std::uint64_t seed, const Log& log = {}) {
  diffusion::TrainConfig tc;
  tc.mode = diffusion::TrainMode::kAdapter;
  tc.epochs = epochs;
  tc.batch_size = config.diffusion.batch_size;
  tc.learning_rate = config.diffusion.learning_rate;
  tc.caption_dropout = config.diffusion.caption_dropout;
  tc.seed = derive_seed({seed, kAdapterTag, 1});
  return diffusion::train(base, &adapter, data, schedule_of(config), tc, progress_logger(log, "adapter"));
}

inline diffusion::CheckpointMeta checkpoint_meta(const RunConfig& config, int layout_channels,
                                                 const std::string& projector_id) {
  diffusion::CheckpointMeta meta;
  meta.denoiser = denoiser_config(config);
  meta.schedule = {config.diffusion.steps, config.diffusion.beta_min, config.diffusion.beta_max};
  meta.codec = config.diffusion.codec;
  meta.caption_dim = config.diffusion.caption_dim;
  meta.caption_seed = derive_seed({config.seed, kCaptionTag});
  meta.layout_channels = layout_channels;
  meta.adapter_seed = derive_seed({config.seed, kAdapterTag});
  meta.projector_id = projector_id;
  return meta;
}

/// samples_per_layout draws per reference, captioned with the reference's
/// caption; layouts == nullptr samples the base alone.
inline std::vector<std::vector<Image>> draw_samples(const RunConfig& config, diffusion::Denoiser<float>& base,
                                                    diffusion::Adapter<float>* adapter,
                                                    const std::vector<SceneRecord>& references,
                                                    const std::vector<layout::NeuralLayout>* layouts,
                                                    int samples_per_layout, std::uint64_t seed) {
  const auto encoder = caption_encoder(config);
  std::vector<diffusion::SampleRequest> requests;
  for (std::size_t r = 0; r < references.size(); ++r) {
    const auto caption = encoder.encode(references[r].sample.caption);
    for (int k = 0; k < samples_per_layout; ++k) {
      requests.push_back({caption, layouts ? &(*layouts)[r] : nullptr, derive_seed({seed, kSampleTag}),
                          static_cast<std::uint64_t>(r) * 1000 + static_cast<std::uint64_t>(k)});
    }
  }
  const auto images = diffusion::sample_images(base, adapter, schedule_of(config),
                                               diffusion::parse_codec(config.diffusion.codec), requests);
  std::vector<std::vector<Image>> out(references.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i / static_cast<std::size_t>(samples_per_layout)].push_back(images[i]);
  return out;
}

inline eval::ProbeConfig probe_config(const RunConfig& config) {
  eval::ProbeConfig pc;
  pc.steps = config.eval.probe_steps;
  pc.seed = config.eval.probe_seed;
  return pc;
}

/// The probe learns from its own freshly generated scenes (same generator
/// settings and style mix, seeds disjoint from the dataset's).
inline eval::Probe train_probe(const RunConfig& config, const Log& log = {}) {
  RunConfig probe_data = config;
  probe_data.seed = derive_seed({config.eval.probe_seed, kProbeTag});
  const auto train = generate_split(probe_data, "train", config.eval.probe_scenes);
  const auto held_out = generate_split(probe_data, "test", config.eval.probe_validation);
  std::vector<scenes::SceneSample> a, b;
  for (const auto& r : train) a.push_back(r.sample);
  for (const auto& r : held_out) b.push_back(r.sample);
  if (log) log("training probe on " + std::to_string(a.size()) + " scenes");
  auto probe = eval::train_probe_segmenter(a, b, probe_config(config));
  if (log) {
    log("probe held-out mIoU " + std::to_string(probe.quality.miou) + ", SI depth " + std::to_string(probe.quality.si_depth));
  }
  return probe;
}

/// Pooled last-layer features of a separate small toy backbone.
inline eval::FeatureFn metric_features(const RunConfig& config) {
  features::ToyBackboneSpec spec;
  spec.seed = config.eval.metric_seed;
  spec.patch_size_px = 4;
  spec.channels_per_layer = {config.eval.metric_channels, config.eval.metric_channels};
  auto backbone = std::make_shared<features::ToyBackbone>(spec);
  return [backbone](const Image& image) { return backbone->pooled_features(image); };
}

inline eval::EvalReport evaluate_samples(const RunConfig& config, eval::Probe& probe,
                                         const std::vector<SceneRecord>& references,
                                         const std::vector<std::vector<Image>>& generated,
                                         const std::vector<SceneRecord>& reference_pool) {
  std::vector<eval::EvalGroup> groups;
  for (std::size_t i = 0; i < references.size(); ++i) groups.push_back({&references[i].sample, generated[i]});
  std::vector<Image> pool;
  if (config.eval.frechet) {
    for (const auto& r : reference_pool) pool.push_back(r.sample.image);
  }
  auto report = eval::evaluate_generated(probe, groups, eval::parse_si_mode(config.eval.si_mode), metric_features(config), pool);
  if (!config.eval.diversity) report.diversity.reset();
  report.fingerprint = fingerprint(config);
  return report;
}

}  // namespace nls::cli
