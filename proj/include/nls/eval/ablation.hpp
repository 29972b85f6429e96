#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nls/eval/report.hpp"

namespace nls::eval {

struct AblationRow {
  int n_components = 0;
  EvalReport report;
};

/// Spearman correlation of each metric against N; empty where undefined.
struct AblationTrend {
  std::optional<double> miou, si_depth, frechet, diversity;
};

inline AblationTrend ablation_trend(const std::vector<AblationRow>& rows) {
  std::vector<double> n, miou, si;
  std::vector<double> fr, dv;
  bool has_fr = true, has_dv = true;
  for (const auto& r : rows) {
    n.push_back(r.n_components);
    miou.push_back(r.report.miou);
    si.push_back(r.report.si_depth);
    has_fr = has_fr && r.report.frechet.has_value();
    has_dv = has_dv && r.report.diversity.has_value();
    fr.push_back(r.report.frechet.value_or(0));
    dv.push_back(r.report.diversity.value_or(0));
  }
  AblationTrend t;
  t.miou = spearman(n, miou);
  t.si_depth = spearman(n, si);
  if (has_fr) t.frechet = spearman(n, fr);
  if (has_dv) t.diversity = spearman(n, dv);
  return t;
}

using AblationRunFn = std::function<EvalReport(int n_components)>;

/// Runs the pipeline once per component count (ascending, distinct).
inline std::vector<AblationRow> ablate_components(const std::vector<int>& component_counts, const AblationRunFn& run) {
  if (component_counts.empty()) throw ParameterError("ablation needs at least one component count");
  for (std::size_t i = 0; i < component_counts.size(); ++i) {
    if (component_counts[i] < 1) throw ParameterError("component counts must be positive");
    if (i && component_counts[i] <= component_counts[i - 1]) {
      throw ParameterError("component counts must be strictly ascending");
    }
  }
  std::vector<AblationRow> rows;
  for (int n : component_counts) rows.push_back({n, run(n)});
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "n_components,miou,si_depth,frechet,diversity\n";
  out << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.n_components << ',' << r.report.miou << ',' << r.report.si_depth << ','
        << detail::optional_csv(r.report.frechet) << ',' << detail::optional_csv(r.report.diversity) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const AblationTrend& t) {
  auto field = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json("undefined");
  };
  return {{"spearman_vs_n",
           {{"miou", field(t.miou)}, {"si_depth", field(t.si_depth)}, {"frechet", field(t.frechet)},
            {"diversity", field(t.diversity)}}}};
}

}  // namespace nls::eval
