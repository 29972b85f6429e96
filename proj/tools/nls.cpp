#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "nls/cli/commands.hpp"

namespace {

using namespace nls;
using namespace nls::cli;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
  bool force = false;
  std::vector<std::string> overrides;
};

Context context_from(const Globals& g) {
  RunConfig config = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  config = apply_overrides(config, g.overrides);
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.output_dir = g.out;
  return make_context(std::move(config), g.dry_run, g.force);
}

template <typename T>
std::optional<T> given(const CLI::Option* opt, const T& value) {
  return opt->count() ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout-conditioned synthetic scene generation: dataset, PCA layouts, diffusion, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--out", g.out, std::string("Run directory (default: $") + kOutputRootEnv + "/<fingerprint>)");
  app.add_flag("--dry-run", g.dry_run, "Validate the config and print the plan without writing anything");
  app.add_flag("--force", g.force, "Replace a run manifest written under a different config");
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)")->allow_extra_args(false);

  auto* make_dataset = app.add_subcommand("make-dataset", "Generate the synthetic train/test scenes");
  auto* fit_pca = app.add_subcommand("fit-pca", "Fit the PCA projector on training features");

  auto* extract = app.add_subcommand("extract-layout", "Build neural layouts for the dataset or one image");
  std::string image, output, preview;
  auto* image_opt = extract->add_option("--image", image, "PNG image to convert")->check(CLI::ExistingFile);
  auto* output_opt = extract->add_option("--output", output, "Layout file written for --image");
  auto* preview_opt = extract->add_option("--preview", preview, "PNG rendering of the layout for --image");

  auto* train = app.add_subcommand("train", "Train the base denoiser and the layout adapter");

  auto* sample = app.add_subcommand("sample", "Draw samples for held-out layouts or one layout file");
  std::string layout_path, caption, sample_out;
  int count = 0;
  auto* layout_opt = sample->add_option("--layout", layout_path, "Layout file to condition on")->check(CLI::ExistingFile);
  auto* caption_opt = sample->add_option("--caption", caption, "Caption for --layout");
  auto* sample_out_opt = sample->add_option("--output", sample_out, "Output directory for --layout samples");
  sample->add_option("--count", count, "Samples per layout")->check(CLI::PositiveNumber);

  auto* evaluate = app.add_subcommand("evaluate", "Score samples with the probe and metric suite");
  std::string samples_manifest;
  auto* samples_opt = evaluate->add_option("--samples", samples_manifest, "Sample manifest.csv to score");

  auto* ablate = app.add_subcommand("ablate", "Component-count ablation over the configured seeds");
  std::vector<int> components;
  auto* components_opt = ablate->add_option("--components", components, "Component counts, e.g. 1,4,16")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto ctx = context_from(g);
    if (make_dataset->parsed()) {
      cmd_make_dataset(ctx);
    } else if (fit_pca->parsed()) {
      cmd_fit_pca(ctx);
    } else if (extract->parsed()) {
      cmd_extract_layout(ctx, {given(image_opt, std::filesystem::path(image)), given(output_opt, std::filesystem::path(output)),
                               given(preview_opt, std::filesystem::path(preview))});
    } else if (train->parsed()) {
      cmd_train(ctx);
    } else if (sample->parsed()) {
      cmd_sample(ctx, {given(layout_opt, std::filesystem::path(layout_path)), given(caption_opt, caption), count,
                       given(sample_out_opt, std::filesystem::path(sample_out))});
    } else if (evaluate->parsed()) {
      cmd_evaluate(ctx, {given(samples_opt, std::filesystem::path(samples_manifest))});
    } else if (ablate->parsed()) {
      const auto summary = cmd_ablate(ctx, {given(components_opt, components)});
      if (!ctx.dry_run) {
        std::cout << "seeds with rising mIoU: " << summary.miou_rising << "/" << summary.trends.size()
                  << ", with falling diversity: " << summary.diversity_falling << "/" << summary.trends.size() << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "nls: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "nls: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
