#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nls/cli/manifest.hpp"
#include "nls/cli/pipeline.hpp"

namespace nls::cli {

namespace fs = std::filesystem;

inline constexpr char kOutputRootEnv[] = "NLS_OUTPUT_ROOT";
inline constexpr char kSampleHeader[] = "file,reference_id,caption,conditioning,index";

/// 2 for problems with the configuration, inputs or prerequisites, 1 for
/// failures while running.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfiguration:
    case ErrorKind::kValidation:
    case ErrorKind::kParameter:
    case ErrorKind::kFormat:
    case ErrorKind::kResolution:
    case ErrorKind::kConsistency: return 2;
    default: return 1;
  }
}

/// Everything a command needs: the validated config and its run directory.
struct Context {
  RunConfig config;
  fs::path root;
  bool dry_run = false;
  bool force = false;
  Log log = [](const std::string& line) { std::cerr << line << '\n'; };

  void say(const std::string& line) const {
    if (log) log(line);
  }
};

/// config.output_dir, else $NLS_OUTPUT_ROOT/<fingerprint prefix>, else
/// ./runs/<fingerprint prefix>.
inline fs::path resolve_root(const RunConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  const char* env = std::getenv(kOutputRootEnv);
  const fs::path base = env && *env ? fs::path(env) : fs::path("runs");
  return base / fingerprint(config).substr(0, 12);
}

inline Context make_context(RunConfig config, bool dry_run = false, bool force = false) {
  config.validate();
  Context ctx;
  ctx.root = resolve_root(config);
  ctx.config = std::move(config);
  ctx.dry_run = dry_run;
  ctx.force = force;
  return ctx;
}

namespace paths {
inline fs::path dataset(const fs::path& root, const std::string& split) { return root / "dataset" / split; }
inline fs::path projector(const fs::path& root) { return root / "projector.nlpc"; }
inline fs::path layouts(const fs::path& root, const std::string& split) { return root / "layouts" / split; }
inline fs::path layout_stats(const fs::path& root) { return root / "layouts" / "stats.json"; }
inline fs::path checkpoint(const fs::path& root) { return root / "checkpoint"; }
inline fs::path samples(const fs::path& root, bool conditioned) {
  return root / (conditioned ? "samples" : "samples_uncond");
}
inline fs::path probe(const fs::path& root) { return root / "probe" / "probe.nlck"; }
inline fs::path eval(const fs::path& root) { return root / "eval"; }
inline fs::path ablation(const fs::path& root) { return root / "ablation"; }
}  // namespace paths

/// Runs `body` under the run-directory lock and records its artifacts in the
/// manifest. In dry-run mode only the plan is printed.
template <typename Body>
void run_locked(const Context& ctx, const std::string& command, const std::vector<std::string>& plan, Body&& body) {
  if (ctx.dry_run) {
    std::cout << "command: " << command << "\nrun directory: " << ctx.root.string()
              << "\nconfig fingerprint: " << fingerprint(ctx.config) << "\nplan:\n";
    for (const auto& step : plan) std::cout << "  - " << step << '\n';
    return;
  }
  RunLock lock(ctx.root);
  auto manifest = open_manifest(ctx.root, ctx.config, ctx.force);
  body(manifest.artifacts);
  save_manifest(ctx.root, manifest);
}

inline std::string relative(const Context& ctx, const fs::path& p) { return fs::relative(p, ctx.root).generic_string(); }

inline std::vector<SceneRecord> require_split(const Context& ctx, const std::string& split) {
  return load_split(paths::dataset(ctx.root, split));
}

inline pca::PcaProjector require_projector(const Context& ctx) {
  const auto path = paths::projector(ctx.root);
  if (!fs::exists(path)) throw ResolutionError("projector " + path.string() + " not found; run `fit-pca` first");
  return pca::load_projector(path);
}

// ---------------------------------------------------------------------------

inline void cmd_make_dataset(const Context& ctx) {
  const auto& d = ctx.config.dataset;
  run_locked(ctx, "make-dataset",
             {"generate " + std::to_string(d.train_size) + " training and " + std::to_string(d.test_size) +
                  " held-out scenes at " + std::to_string(d.resolution) + " px",
              "write " + paths::dataset(ctx.root, "train").string() + " and " + paths::dataset(ctx.root, "test").string()},
             [&](auto& artifacts) {
               for (const auto& [split, count] : {std::pair{"train", d.train_size}, std::pair{"test", d.test_size}}) {
                 const auto dir = paths::dataset(ctx.root, split);
                 write_split(dir, generate_split(ctx.config, split, count));
                 artifacts[std::string("dataset_") + split] = relative(ctx, dir / "manifest.csv");
                 ctx.say("wrote " + std::to_string(count) + " scenes to " + dir.string());
               }
             });
}

inline void cmd_fit_pca(const Context& ctx) {
  run_locked(ctx, "fit-pca",
             {"extract " + ctx.config.backbone.convention + " features of the training split",
              "fit " + std::to_string(ctx.config.pca.n_components) + " components on up to " +
                  std::to_string(ctx.config.pca.sample_count) + " feature vectors",
              "write " + paths::projector(ctx.root).string()},
             [&](auto& artifacts) {
               const auto train = require_split(ctx, "train");
               const FeatureSource source(ctx.config);
               const auto projector = fit_projector(ctx.config, dataset_features(source, "train", train),
                                                    ctx.config.pca.n_components, ctx.config.seed, ctx.log);
               pca::save_projector(projector, paths::projector(ctx.root));
               artifacts["projector"] = relative(ctx, paths::projector(ctx.root));
               ctx.say("fitted " + projector.id() + " on " + std::to_string(projector.sample_count) + " vectors");
             });
}

inline json stats_json(const std::vector<layout::ChannelStats>& stats, const std::string& projector_id) {
  json s = json::array();
  for (const auto& c : stats) s.push_back({{"shift", c.shift}, {"scale", c.scale}});
  return {{"projector_id", projector_id}, {"stats", s}};
}

inline std::vector<layout::ChannelStats> load_stats(const Context& ctx, const pca::PcaProjector& projector) {
  const auto path = paths::layout_stats(ctx.root);
  if (!fs::exists(path)) throw ResolutionError("layout statistics " + path.string() + " not found; run `extract-layout` first");
  const auto j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("stats")) throw FormatError(path.string() + ": not a layout statistics file");
  if (j.value("projector_id", "") != projector.id()) {
    throw ConsistencyError(path.string() + " was computed for another projector; re-run `extract-layout`");
  }
  std::vector<layout::ChannelStats> out;
  for (const auto& s : j["stats"]) out.push_back({s.at("shift").get<float>(), s.at("scale").get<float>()});
  return out;
}

/// Layouts of both splits, written under layouts/.
inline LayoutSet write_layouts(const Context& ctx, std::map<std::string, std::string>& artifacts) {
  const auto projector = require_projector(ctx);
  const auto train = require_split(ctx, "train");
  const auto test = require_split(ctx, "test");
  const FeatureSource source(ctx.config);
  auto set = build_layouts(projector, dataset_features(source, "train", train), dataset_features(source, "test", test),
                           ctx.config.dataset.resolution);
  for (const auto& [split, records, layouts] :
       {std::tuple{"train", &train, &set.train}, std::tuple{"test", &test, &set.test}}) {
    const auto dir = paths::layouts(ctx.root, split);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < records->size(); ++i) {
      layout::save_layout((*layouts)[i], dir / ((*records)[i].id + ".nllo"));
    }
    artifacts[std::string("layouts_") + split] = relative(ctx, dir);
  }
  io::write_file(paths::layout_stats(ctx.root), stats_json(set.stats, projector.id()).dump(2) + "\n");
  artifacts["layout_stats"] = relative(ctx, paths::layout_stats(ctx.root));
  ctx.say("wrote " + std::to_string(set.train.size() + set.test.size()) + " layouts");
  return set;
}

inline std::vector<layout::NeuralLayout> load_layouts(const Context& ctx, const std::string& split,
                                                      const std::vector<SceneRecord>& records) {
  const auto dir = paths::layouts(ctx.root, split);
  std::vector<layout::NeuralLayout> out;
  for (const auto& r : records) {
    const auto path = dir / (r.id + ".nllo");
    if (!fs::exists(path)) throw ResolutionError("layout " + path.string() + " not found; run `extract-layout` first");
    out.push_back(layout::load_layout(path));
  }
  return out;
}

struct ExtractOptions {
  std::optional<fs::path> image;   // a single image instead of the dataset
  std::optional<fs::path> output;  // .nllo path for the single image
  std::optional<fs::path> preview; // optional RGB rendering of it
};

inline void cmd_extract_layout(const Context& ctx, const ExtractOptions& opt = {}) {
  if (opt.image && !opt.output) throw ParameterError("--image needs --output");
  if (!opt.image) {
    run_locked(ctx, "extract-layout",
               {"project train/test features with " + paths::projector(ctx.root).string(),
                "compute normalization statistics on the training split", "write layouts/{train,test}/*.nllo"},
               [&](auto& artifacts) { write_layouts(ctx, artifacts); });
    return;
  }
  if (ctx.dry_run) {
    std::cout << "command: extract-layout\nplan:\n  - layout of " << opt.image->string() << " -> " << opt.output->string()
              << '\n';
    return;
  }
  const auto projector = require_projector(ctx);
  const auto stats = load_stats(ctx, projector);
  const FeatureSource source(ctx.config);
  const auto image = png::read_rgb(*opt.image);
  const int res = ctx.config.dataset.resolution;
  if (image.width != res || image.height != res) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", the run uses " + std::to_string(res) + " px");
  }
  const auto nl = layout::make_layout(layout::normalize_layout(raw_layout_of(source(image), projector, res), stats), stats,
                                      projector.id());
  layout::save_layout(nl, *opt.output);
  if (opt.preview) png::write_rgb(*opt.preview, layout::layout_to_rgb(nl));
  ctx.say("wrote " + opt.output->string());
}

inline void cmd_train(const Context& ctx) {
  const auto& d = ctx.config.diffusion;
  run_locked(
      ctx, "train",
      {"build layouts if layouts/ is missing",
       "train the base denoiser for " + std::to_string(d.base_epochs) + " epochs",
       "train the layout adapter on the frozen base for " + std::to_string(d.adapter_epochs) + " epochs",
       "write " + paths::checkpoint(ctx.root).string()},
      [&](auto& artifacts) {
        const auto projector = require_projector(ctx);
        const auto train = require_split(ctx, "train");
        std::vector<layout::NeuralLayout> layouts;
        if (fs::exists(paths::layout_stats(ctx.root))) {
          load_stats(ctx, projector);
          layouts = load_layouts(ctx, "train", train);
        } else {
          layouts = write_layouts(ctx, artifacts).train;
        }
        const auto data = diffusion_data(ctx.config, train, layouts);
        diffusion::Denoiser<float> base(denoiser_config(ctx.config));
        auto meta = checkpoint_meta(ctx.config, projector.n_components, projector.id());
        const auto base_run = train_base(ctx.config, base, data, ctx.log);
        diffusion::Adapter<float> adapter(base, projector.n_components, meta.adapter_seed);
        const auto adapter_run = train_adapter(ctx.config, base, adapter, data, d.adapter_epochs, ctx.config.seed, ctx.log);
        meta.loss_curve = base_run.curve;
        const int offset = base_run.curve.empty() ? 0 : base_run.curve.back().step;
        for (auto p : adapter_run.curve) {
          p.step += offset;
          meta.loss_curve.push_back(p);
        }
        meta.rng_state = diffusion::rng_state(adapter_run.rng);
        diffusion::save_checkpoint(paths::checkpoint(ctx.root), meta, base, &adapter);
        artifacts["checkpoint"] = relative(ctx, paths::checkpoint(ctx.root) / "config.json");
        ctx.say("saved checkpoint to " + paths::checkpoint(ctx.root).string());
      });
}

inline diffusion::LoadedModel require_checkpoint(const Context& ctx, bool need_adapter) {
  auto model = diffusion::load_checkpoint(paths::checkpoint(ctx.root));
  if (need_adapter && !model.adapter) {
    throw ResolutionError("checkpoint " + paths::checkpoint(ctx.root).string() + " has no adapter; run `train` first");
  }
  return model;
}

/// Writes images and their manifest; `captions[r]` belongs to references[r].
inline void write_samples(const fs::path& dir, const std::vector<std::string>& reference_ids,
                          const std::vector<std::string>& captions, const std::vector<std::vector<Image>>& images,
                          bool conditioned) {
  fs::create_directories(dir);
  std::string manifest = std::string(kSampleHeader) + "\n";
  for (std::size_t r = 0; r < images.size(); ++r) {
    for (std::size_t k = 0; k < images[r].size(); ++k) {
      char name[160];
      std::snprintf(name, sizeof name, "%s_s%03zu.png", reference_ids[r].c_str(), k);
      png::write_rgb(dir / name, images[r][k]);
      manifest += std::string(name) + "," + reference_ids[r] + "," + detail::csv_field(captions[r]) + "," +
                  (conditioned ? "layout" : "none") + "," + std::to_string(k) + "\n";
    }
  }
  io::write_file(dir / "manifest.csv", manifest);
}

struct SampleOptions {
  std::optional<fs::path> layout;  // sample from one layout file instead of the held-out split
  std::optional<std::string> caption;
  int count = 0;  // 0: sampling.samples_per_layout
  std::optional<fs::path> output;
};

inline void cmd_sample(const Context& ctx, const SampleOptions& opt = {}) {
  const auto& s = ctx.config.sampling;
  const int count = opt.count > 0 ? opt.count : s.samples_per_layout;
  if (opt.layout) {
    if (!opt.caption) throw ParameterError("--layout needs --caption");
    if (!opt.output) throw ParameterError("--layout needs --output");
    if (ctx.dry_run) {
      std::cout << "command: sample\nplan:\n  - draw " << count << " images from " << opt.layout->string() << " into "
                << opt.output->string() << '\n';
      return;
    }
    auto model = require_checkpoint(ctx, true);
    const auto nl = layout::load_layout(*opt.layout);
    if (nl.projector_id != model.meta.projector_id) {
      throw ConsistencyError("layout was built with '" + nl.projector_id + "' but the checkpoint expects '" +
                             model.meta.projector_id + "'");
    }
    SceneRecord ref;
    ref.id = opt.layout->stem().string();
    ref.sample.caption = *opt.caption;
    const std::vector<layout::NeuralLayout> layouts{nl};
    const auto images = draw_samples(ctx.config, *model.base, model.adapter.get(), {ref}, &layouts, count, ctx.config.seed);
    write_samples(*opt.output, {ref.id}, {ref.sample.caption}, images, true);
    ctx.say("wrote " + std::to_string(count) + " samples to " + opt.output->string());
    return;
  }
  run_locked(ctx, "sample",
             {"draw " + std::to_string(count) + " samples for each of the first " + std::to_string(s.layouts) +
                  " held-out layouts",
              s.unconditional ? "draw the same number from the base model alone with the same captions"
                              : "skip unconditional samples",
              "write samples/ (and samples_uncond/)"},
             [&](auto& artifacts) {
               auto model = require_checkpoint(ctx, true);
               auto test = require_split(ctx, "test");
               test.resize(static_cast<std::size_t>(s.layouts));
               const auto layouts = load_layouts(ctx, "test", test);
               for (const auto& l : layouts) {
                 if (l.projector_id != model.meta.projector_id) {
                   throw ConsistencyError("held-out layouts do not match the checkpoint's projector; re-run `extract-layout` and `train`");
                 }
               }
               std::vector<std::string> ids, captions;
               for (const auto& r : test) {
                 ids.push_back(r.id);
                 captions.push_back(r.sample.caption);
               }
               for (const bool conditioned : {true, false}) {
                 if (!conditioned && !s.unconditional) continue;
                 const auto images = draw_samples(ctx.config, *model.base, conditioned ? model.adapter.get() : nullptr, test,
                                                  conditioned ? &layouts : nullptr, count, ctx.config.seed);
                 const auto dir = paths::samples(ctx.root, conditioned);
                 write_samples(dir, ids, captions, images, conditioned);
                 artifacts[conditioned ? "samples" : "samples_uncond"] = relative(ctx, dir / "manifest.csv");
                 ctx.say("wrote " + std::to_string(test.size() * static_cast<std::size_t>(count)) + " samples to " +
                         dir.string());
               }
             });
}

/// The cached probe, or a freshly trained one (saved under probe/).
inline eval::Probe obtain_probe(const Context& ctx) {
  const auto path = paths::probe(ctx.root);
  if (fs::exists(path)) {
    auto probe = eval::load_probe(path, probe_config(ctx.config));
    RunConfig probe_data = ctx.config;
    probe_data.seed = derive_seed({ctx.config.eval.probe_seed, kProbeTag});
    std::vector<scenes::SceneSample> held_out;
    for (auto& r : generate_split(probe_data, "test", ctx.config.eval.probe_validation)) held_out.push_back(r.sample);
    probe.quality = eval::measure_probe(probe, held_out);
    return probe;
  }
  auto probe = train_probe(ctx.config, ctx.log);
  fs::create_directories(path.parent_path());
  eval::save_probe(probe, path);
  return probe;
}

/// Groups a sample manifest by reference id, keeping file order.
inline std::vector<std::pair<std::string, std::vector<Image>>> load_samples(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw ResolutionError("sample manifest " + manifest_path.string() + " not found; run `sample` first");
  std::vector<std::pair<std::string, std::vector<Image>>> out;
  for (const auto& row : detail::read_csv(manifest_path, kSampleHeader)) {
    if (out.empty() || out.back().first != row[1]) out.emplace_back(row[1], std::vector<Image>{});
    out.back().second.push_back(png::read_rgb(manifest_path.parent_path() / row[0]));
  }
  if (out.empty()) throw ParameterError("sample manifest " + manifest_path.string() + " lists no samples");
  return out;
}

inline eval::EvalReport evaluate_manifest(const Context& ctx, eval::Probe& probe, const fs::path& manifest_path,
                                          const std::vector<SceneRecord>& test, const std::vector<SceneRecord>& pool) {
  const auto groups = load_samples(manifest_path);
  std::map<std::string, const SceneRecord*> by_id;
  for (const auto& r : test) by_id[r.id] = &r;
  std::vector<SceneRecord> references;
  std::vector<std::vector<Image>> generated;
  for (const auto& [id, images] : groups) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ConsistencyError("sample reference '" + id + "' is not in the held-out split");
    references.push_back(*it->second);
    generated.push_back(images);
  }
  return evaluate_samples(ctx.config, probe, references, generated, pool);
}

inline void write_report(const fs::path& dir, const std::string& stem, const eval::EvalReport& report) {
  fs::create_directories(dir);
  io::write_file(dir / (stem + ".json"), eval::to_json(report).dump(2) + "\n");
  io::write_file(dir / (stem + ".csv"), eval::report_csv_header() + "\n" + eval::report_csv_row(report) + "\n");
}

struct EvaluateOptions {
  std::optional<fs::path> samples;  // a sample manifest other than samples/manifest.csv
};

inline void cmd_evaluate(const Context& ctx, const EvaluateOptions& opt = {}) {
  run_locked(ctx, "evaluate",
             {"train the probe segmenter/depth estimator (or reuse probe/probe.nlck)",
              "score samples/ (and samples_uncond/) against the held-out references", "write eval/report.{json,csv}"},
             [&](auto& artifacts) {
               const auto manifest_path = opt.samples ? *opt.samples : paths::samples(ctx.root, true) / "manifest.csv";
               const auto test = require_split(ctx, "test");
               load_samples(manifest_path);
               const auto pool = require_split(ctx, "train");
               auto probe = obtain_probe(ctx);
               artifacts["probe"] = relative(ctx, paths::probe(ctx.root));
               if (!probe.meets_gate()) {
                 ctx.say("warning: probe below its quality gate (mIoU " + std::to_string(probe.quality.miou) + ", SI depth " +
                         std::to_string(probe.quality.si_depth) + "); scores are recorded with the probe quality");
               }
               const auto report = evaluate_manifest(ctx, probe, manifest_path, test, pool);
               write_report(paths::eval(ctx.root), "report", report);
               artifacts["report"] = relative(ctx, paths::eval(ctx.root) / "report.csv");
               ctx.say("conditioned mIoU " + std::to_string(report.miou) + ", SI depth " + std::to_string(report.si_depth));
               const auto uncond = paths::samples(ctx.root, false) / "manifest.csv";
               if (!opt.samples && fs::exists(uncond)) {
                 const auto base_report = evaluate_manifest(ctx, probe, uncond, test, pool);
                 write_report(paths::eval(ctx.root), "report_uncond", base_report);
                 artifacts["report_uncond"] = relative(ctx, paths::eval(ctx.root) / "report_uncond.csv");
                 ctx.say("unconditional mIoU " + std::to_string(base_report.miou) + ", gap " +
                         std::to_string(report.miou - base_report.miou));
               }
             });
}

/// One ablation seed: for each N a projector, layouts, an adapter on the
/// shared frozen base, samples and an evaluation.
inline std::vector<eval::AblationRow> ablation_seed(const Context& ctx, const std::vector<int>& components,
                                                    diffusion::Denoiser<float>& base, eval::Probe& probe,
                                                    const std::vector<SceneRecord>& train,
                                                    const std::vector<SceneRecord>& test,
                                                    const std::vector<features::DenseFeatureMap>& train_features,
                                                    const std::vector<features::DenseFeatureMap>& test_features,
                                                    std::uint64_t seed) {
  const auto& a = ctx.config.ablation;
  const auto n_refs = std::min<std::ptrdiff_t>(a.layouts, static_cast<std::ptrdiff_t>(test.size()));
  std::vector<SceneRecord> references(test.begin(), test.begin() + n_refs);
  std::vector<features::DenseFeatureMap> reference_features(test_features.begin(), test_features.begin() + n_refs);
  return eval::ablate_components(components, [&](int n) {
    const auto projector = fit_projector(ctx.config, train_features, n, seed, ctx.log);
    const auto set = build_layouts(projector, train_features, reference_features, ctx.config.dataset.resolution);
    const auto data = diffusion_data(ctx.config, train, set.train);
    diffusion::Adapter<float> adapter(base, n, derive_seed({seed, kAdapterTag}));
    train_adapter(ctx.config, base, adapter, data, a.adapter_epochs, seed, {});
    const auto images = draw_samples(ctx.config, base, &adapter, references, &set.test, a.samples_per_layout, seed);
    auto report = evaluate_samples(ctx.config, probe, references, images, train);
    report.n_layouts = static_cast<int>(n_refs);
    ctx.say("seed " + std::to_string(seed) + " N=" + std::to_string(n) + ": mIoU " + std::to_string(report.miou) +
            ", diversity " + (report.diversity ? std::to_string(*report.diversity) : std::string("n/a")));
    return report;
  });
}

struct AblationSummary {
  std::vector<std::vector<eval::AblationRow>> per_seed;
  std::vector<eval::AblationTrend> trends;
  int miou_rising = 0;
  int diversity_falling = 0;
};

inline json to_json(const AblationSummary& s, const std::vector<std::uint64_t>& seeds) {
  json per_seed = json::array();
  for (std::size_t i = 0; i < s.trends.size(); ++i) per_seed.push_back({{"seed", seeds[i]}, {"spearman", eval::to_json(s.trends[i])}});
  return {{"per_seed", per_seed},
          {"seeds_with_rising_miou", s.miou_rising},
          {"seeds_with_falling_diversity", s.diversity_falling},
          {"n_seeds", s.trends.size()}};
}

struct AblateOptions {
  std::optional<std::vector<int>> components;  // overrides ablation.components
};

inline AblationSummary cmd_ablate(const Context& ctx, const AblateOptions& opt = {}) {
  const auto& a = ctx.config.ablation;
  const auto components = opt.components.value_or(a.components);
  if (opt.components) {
    RunConfig check = ctx.config;
    check.ablation.components = components;
    check.validate();
  }
  std::string ns;
  for (int n : components) ns += (ns.empty() ? "" : ",") + std::to_string(n);
  AblationSummary summary;
  run_locked(ctx, "ablate",
             {"reuse the base denoiser from " + paths::checkpoint(ctx.root).string(),
              "for N in {" + ns + "} and " + std::to_string(a.seeds.size()) +
                  " seeds: fit PCA, build layouts, train an adapter for " + std::to_string(a.adapter_epochs) +
                  " epochs, sample and evaluate",
              "write ablation/seed-<s>.csv and ablation/trend.json"},
             [&](auto& artifacts) {
               auto model = require_checkpoint(ctx, false);
               const auto train = require_split(ctx, "train");
               const auto test = require_split(ctx, "test");
               const FeatureSource source(ctx.config);
               const auto train_features = dataset_features(source, "train", train);
               const auto test_features = dataset_features(source, "test", test);
               auto probe = obtain_probe(ctx);
               artifacts["probe"] = relative(ctx, paths::probe(ctx.root));
               const auto dir = paths::ablation(ctx.root);
               fs::create_directories(dir);
               for (const std::uint64_t seed : a.seeds) {
                 auto rows = ablation_seed(ctx, components, *model.base, probe, train, test, train_features, test_features,
                                           seed);
                 const auto trend = eval::ablation_trend(rows);
                 if (trend.miou && *trend.miou > 0) ++summary.miou_rising;
                 if (trend.diversity && *trend.diversity < 0) ++summary.diversity_falling;
                 const auto csv = dir / ("seed-" + std::to_string(seed) + ".csv");
                 io::write_file(csv, eval::ablation_csv(rows));
                 artifacts["ablation_seed_" + std::to_string(seed)] = relative(ctx, csv);
                 summary.per_seed.push_back(std::move(rows));
                 summary.trends.push_back(trend);
               }
               io::write_file(dir / "trend.json", to_json(summary, a.seeds).dump(2) + "\n");
               artifacts["ablation_trend"] = relative(ctx, dir / "trend.json");
             });
  return summary;
}

}  // namespace nls::cli
