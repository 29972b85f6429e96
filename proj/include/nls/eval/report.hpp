#pragma once

#include <Eigen/Dense>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "nls/eval/metrics.hpp"
#include "nls/eval/probe.hpp"

namespace nls::eval {

/// Which depth map the generated image's probe estimate is compared with.
enum class SiMode { kProbeVsGroundTruth, kProbeVsProbe };

inline std::string_view si_mode_name(SiMode m) {
  return m == SiMode::kProbeVsGroundTruth ? "probe-vs-gt" : "probe-vs-probe";
}

inline SiMode parse_si_mode(std::string_view name) {
  if (name == "probe-vs-gt") return SiMode::kProbeVsGroundTruth;
  if (name == "probe-vs-probe") return SiMode::kProbeVsProbe;
  throw ConfigurationError("unknown SI depth mode '" + std::string(name) + "' (expected probe-vs-gt or probe-vs-probe)");
}

struct EvalReport {
  double miou = 0;
  std::vector<std::optional<double>> per_class_iou;
  double si_depth = 0;
  SiMode si_mode = SiMode::kProbeVsGroundTruth;
  std::optional<double> frechet;    // empty when either set has too few rows
  std::optional<double> diversity;  // empty with fewer than 2 samples per layout
  int n_samples = 0;
  int n_layouts = 0;
  ProbeQuality probe;
  std::string fingerprint;
};

/// One reference scene and the images generated from its layout.
struct EvalGroup {
  const scenes::SceneSample* reference = nullptr;
  std::vector<Image> generated;
};

/// Scores generated images against their reference scenes. mIoU and SI depth
/// are per-image means; per-class IoU averages over the images where the
/// class is present; diversity averages the per-layout pairwise diversity;
/// the Fréchet distance compares all generated images with reference_pool.
inline EvalReport evaluate_generated(Probe& probe, std::span<const EvalGroup> groups, SiMode si_mode,
                                     const FeatureFn& features, std::span<const Image> reference_pool) {
  if (groups.empty()) throw ParameterError("nothing to evaluate: the sample set is empty");
  EvalReport report;
  report.si_mode = si_mode;
  report.probe = probe.quality;
  report.n_layouts = static_cast<int>(groups.size());
  constexpr int k = scenes::kNumClasses;
  std::vector<double> class_sum(k, 0.0);
  std::vector<int> class_count(k, 0);
  double diversity = 0;
  bool diversity_defined = true;
  std::vector<Eigen::VectorXd> generated_features;
  for (const auto& group : groups) {
    if (!group.reference) throw ParameterError("evaluation group without a reference scene");
    if (group.generated.empty()) throw ParameterError("evaluation group without generated images");
    const auto outputs = run_probe(probe, group.generated);
    DepthMap reference_depth = group.reference->depth_map;
    if (si_mode == SiMode::kProbeVsProbe) reference_depth = estimate_depth_probe(probe, group.reference->image);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const auto iou = mean_iou(outputs[i].semantics, group.reference->semantic_map, k);
      report.miou += iou.miou;
      for (int c = 0; c < k; ++c) {
        if (!iou.per_class[static_cast<std::size_t>(c)]) continue;
        class_sum[static_cast<std::size_t>(c)] += *iou.per_class[static_cast<std::size_t>(c)];
        ++class_count[static_cast<std::size_t>(c)];
      }
      report.si_depth += si_depth_error(outputs[i].depth, reference_depth);
      ++report.n_samples;
    }
    if (group.generated.size() >= 2) {
      diversity += pairwise_diversity(group.generated, features);
    } else {
      diversity_defined = false;
    }
    for (const auto& image : group.generated) generated_features.push_back(features(image));
  }
  report.miou /= report.n_samples;
  report.si_depth /= report.n_samples;
  if (diversity_defined) report.diversity = diversity / static_cast<double>(groups.size());
  for (int c = 0; c < k; ++c) {
    report.per_class_iou.push_back(class_count[static_cast<std::size_t>(c)]
                                       ? std::optional<double>(class_sum[static_cast<std::size_t>(c)] /
                                                               class_count[static_cast<std::size_t>(c)])
                                       : std::nullopt);
  }
  const auto dim = generated_features.front().size();
  if (static_cast<Eigen::Index>(generated_features.size()) > dim &&
      static_cast<Eigen::Index>(reference_pool.size()) > dim) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(generated_features.size()), dim);
    for (std::size_t i = 0; i < generated_features.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = generated_features[i].transpose();
    Eigen::MatrixXd b(static_cast<Eigen::Index>(reference_pool.size()), dim);
    for (std::size_t i = 0; i < reference_pool.size(); ++i) b.row(static_cast<Eigen::Index>(i)) = features(reference_pool[i]).transpose();
    report.frechet = frechet_feature_distance(a, b);
  }
  return report;
}

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::string optional_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out << std::setprecision(9) << *v;
  return out.str();
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : r.per_class_iou) per_class.push_back(detail::optional_json(v));
  return {{"miou", r.miou},
          {"per_class_iou", per_class},
          {"si_depth", r.si_depth},
          {"si_depth_mode", si_mode_name(r.si_mode)},
          {"frechet", detail::optional_json(r.frechet)},
          {"diversity", detail::optional_json(r.diversity)},
          {"n_samples", r.n_samples},
          {"n_layouts", r.n_layouts},
          {"probe", {{"miou", r.probe.miou}, {"si_depth", r.probe.si_depth}, {"n_samples", r.probe.n_samples}}},
          {"fingerprint", r.fingerprint}};
}

inline std::string report_csv_header() { return "miou,si_depth,si_depth_mode,frechet,diversity,n_samples,fingerprint"; }

inline std::string report_csv_row(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(9) << r.miou << ',' << r.si_depth << ',' << si_mode_name(r.si_mode) << ','
      << detail::optional_csv(r.frechet) << ',' << detail::optional_csv(r.diversity) << ',' << r.n_samples << ','
      << r.fingerprint;
  return out.str();
}

}  // namespace nls::eval
