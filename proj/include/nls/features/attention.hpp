#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "nls/core/error.hpp"
#include "nls/features/dense_map.hpp"

namespace nls::features {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FeatureKind { kKey, kQuery, kValue, kToken, kActivation };

/// Self-attention features come from the block's own tokens; cross-attention
/// keys/values are projections of the block's conditioning input.
enum class AttentionSource { kSelf, kCross };

inline std::string_view kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::kKey: return "key";
    case FeatureKind::kQuery: return "query";
    case FeatureKind::kValue: return "value";
    case FeatureKind::kToken: return "token";
    case FeatureKind::kActivation: return "activation";
  }
  return "?";
}

inline FeatureKind parse_kind(std::string_view name) {
  for (auto k : {FeatureKind::kKey, FeatureKind::kQuery, FeatureKind::kValue, FeatureKind::kToken,
                 FeatureKind::kActivation}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigurationError("unknown feature kind '" + std::string(name) + "'");
}

/// Everything one attention layer exposes for a single image. Rows are tokens;
/// row 0 is the CLS token when `has_cls` is set.
struct AttentionBlockOutput {
  Matrix queries;
  Matrix keys;
  Matrix values;
  Matrix tokens;
  bool has_cls = false;
  std::optional<Matrix> cross_input;
  std::optional<Matrix> cross_keys;
  std::optional<Matrix> cross_values;

  // Spatial layout of the patch tokens for this layer.
  int grid_height = 0;
  int grid_width = 0;
  int stride_px = 1;

  Eigen::Index token_count() const { return tokens.rows(); }
  Eigen::Index patch_count() const { return tokens.rows() - (has_cls ? 1 : 0); }
};

/// Returns the requested features; the CLS row is dropped only when asked and present.
inline Matrix select_attention_features(const AttentionBlockOutput& block, FeatureKind kind, bool exclude_cls,
                                        AttentionSource source = AttentionSource::kSelf) {
  const Matrix* chosen = nullptr;
  bool spatial = true;
  if (source == AttentionSource::kCross && (kind == FeatureKind::kKey || kind == FeatureKind::kValue)) {
    if (!block.cross_input) {
      throw UnavailableFeatureError(std::string("cross-attention ") + std::string(kind_name(kind)) +
                                    " requested but the block has no cross_input");
    }
    chosen = kind == FeatureKind::kKey ? &*block.cross_keys : &*block.cross_values;
    spatial = false;
  } else {
    switch (kind) {
      case FeatureKind::kKey: chosen = &block.keys; break;
      case FeatureKind::kQuery: chosen = &block.queries; break;
      case FeatureKind::kValue: chosen = &block.values; break;
      case FeatureKind::kToken:
      case FeatureKind::kActivation: chosen = &block.tokens; break;
    }
  }
  if (chosen->size() == 0) {
    throw UnavailableFeatureError(std::string(kind_name(kind)) + " features are empty for this block");
  }
  if (exclude_cls && block.has_cls && spatial) {
    return chosen->bottomRows(chosen->rows() - 1);
  }
  return *chosen;
}

/// Row-major placement: token i -> cell (i / width, i % width).
inline DenseFeatureMap reshape_to_grid(const Matrix& features, int height_patches, int width_patches, int stride_px,
                                       std::string source_id = {}) {
  if (height_patches <= 0 || width_patches <= 0 || stride_px <= 0) {
    throw ShapeError("grid dimensions and stride must be positive");
  }
  if (features.rows() != static_cast<Eigen::Index>(height_patches) * width_patches) {
    throw ShapeError("token count " + std::to_string(features.rows()) + " does not match grid " +
                     std::to_string(height_patches) + "x" + std::to_string(width_patches));
  }
  DenseFeatureMap map(height_patches, width_patches, static_cast<int>(features.cols()), stride_px,
                      std::move(source_id));
  // Row-major matrix storage already matches the (h, w, c) layout.
  std::copy(features.data(), features.data() + features.size(), map.values.begin());
  return map;
}

inline Matrix flatten(const DenseFeatureMap& map) {
  Matrix out(map.cell_count(), map.channels);
  std::copy(map.values.begin(), map.values.end(), out.data());
  return out;
}

}  // namespace nls::features
