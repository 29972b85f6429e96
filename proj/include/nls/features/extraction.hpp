#pragma once

#include <algorithm>
#include <concepts>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nls/core/error.hpp"
#include "nls/core/image.hpp"
#include "nls/features/attention.hpp"
#include "nls/features/dense_map.hpp"
#include "nls/features/toy_backbone.hpp"

namespace nls::features {

/// Declarative record of where a backbone's dense features are taken from.
/// Negative layer indices count from the end (-1 is the last layer).
struct BackboneConvention {
  std::string backbone_id;
  std::vector<int> layer_selector;
  FeatureKind feature_kind = FeatureKind::kKey;
  bool exclude_cls = true;
  bool concat_layers = false;
  bool caption_required = false;

  void validate() const {
    if (layer_selector.empty()) throw ConfigurationError(backbone_id + ": layer_selector must not be empty");
    if (concat_layers && layer_selector.size() < 2) {
      throw ConfigurationError(backbone_id + ": concat_layers needs more than one layer");
    }
    if (!concat_layers && layer_selector.size() > 1) {
      throw ConfigurationError(backbone_id + ": multiple layers require concat_layers");
    }
  }
};

namespace conventions {

/// Keys of the last self-attention layer without the CLS key.
inline BackboneConvention dino() { return {"dino", {-1}, FeatureKind::kKey, true, false, false}; }

/// Non-CLS tokens of the last transformer layer.
inline BackboneConvention dinov2() { return {"dinov2", {-1}, FeatureKind::kToken, true, false, false}; }

/// All but the CLS token of the last layer before pooling.
inline BackboneConvention clip() { return {"clip", {-1}, FeatureKind::kToken, true, false, false}; }

/// Activations of layers 2, 5 and 8, upsampled to the finest and concatenated.
/// Needs a backbone with at least nine layers and a caption alongside the image.
inline BackboneConvention stable_diffusion() {
  return {"sd", {2, 5, 8}, FeatureKind::kActivation, true, true, true};
}

inline BackboneConvention by_name(std::string_view name) {
  if (name == "dino") return dino();
  if (name == "dinov2") return dinov2();
  if (name == "clip") return clip();
  if (name == "sd") return stable_diffusion();
  throw ConfigurationError("unknown backbone convention '" + std::string(name) + "'");
}

/// Toy backbone layout that can serve a convention: three attention blocks for
/// the ViT-style conventions, nine blocks on a coarse-to-fine grid for "sd".
inline ToyBackboneSpec toy_spec_for(const BackboneConvention& convention, std::uint64_t seed, int patch_size_px,
                                    int channels) {
  ToyBackboneSpec spec;
  spec.seed = seed;
  spec.patch_size_px = patch_size_px;
  if (convention.backbone_id == "sd") {
    spec.channels_per_layer.assign(9, channels);
    spec.pool_per_layer = {4, 4, 4, 2, 2, 2, 1, 1, 1};
    spec.with_cls = false;
  } else {
    spec.channels_per_layer.assign(3, channels);
  }
  return spec;
}

}  // namespace conventions

/// Upsamples coarser maps to `target_height` x `target_width` by
/// nearest-neighbour cell replication and concatenates channels in list order.
inline DenseFeatureMap concat_multilayer(std::span<const DenseFeatureMap> maps, int target_height, int target_width) {
  if (maps.empty()) throw ParameterError("concat_multilayer needs at least one map");
  const int image_h = maps.front().image_height();
  const int image_w = maps.front().image_width();
  bool target_listed = false;
  int channels = 0;
  for (const auto& m : maps) {
    if (m.image_height() != image_h || m.image_width() != image_w) {
      throw ConsistencyError("maps imply different source images: " + std::to_string(image_h) + "x" +
                             std::to_string(image_w) + " vs " + std::to_string(m.image_height()) + "x" +
                             std::to_string(m.image_width()));
    }
    if (m.height_patches > target_height || m.width_patches > target_width) {
      throw ParameterError("target grid is coarser than an input map");
    }
    target_listed |= (m.height_patches == target_height && m.width_patches == target_width);
    channels += m.channels;
  }
  if (!target_listed) throw ParameterError("target resolution must be the resolution of one of the maps");

  std::string source = maps.front().source_id;
  for (const auto& m : maps) {
    if (m.source_id != maps.front().source_id) {
      source.clear();
      for (const auto& n : maps) source += (source.empty() ? "" : "+") + n.source_id;
      break;
    }
  }

  DenseFeatureMap out(target_height, target_width, channels, image_h / target_height, std::move(source));
  int offset = 0;
  for (const auto& m : maps) {
    for (int y = 0; y < target_height; ++y) {
      const int sy = y * m.height_patches / target_height;
      for (int x = 0; x < target_width; ++x) {
        const int sx = x * m.width_patches / target_width;
        auto src = m.cell(sy, sx);
        std::copy(src.begin(), src.end(), out.cell(y, x).begin() + offset);
      }
    }
    offset += m.channels;
  }
  return out;
}

/// Anything that turns an image into per-layer attention outputs.
template <typename B>
concept FeatureBackend = requires(const B& b, const Image& image) {
  { b.forward(image) } -> std::convertible_to<std::vector<AttentionBlockOutput>>;
  { b.source_id() } -> std::convertible_to<std::string>;
};

inline std::string convention_source_id(std::string_view backend_id, const BackboneConvention& convention) {
  return std::string(backend_id) + "/" + convention.backbone_id + ":" + std::string(kind_name(convention.feature_kind));
}

/// forward -> select -> reshape -> (optional) concat, as the convention says.
template <FeatureBackend Backend>
DenseFeatureMap extract_dense_features(const Image& image, const BackboneConvention& convention,
                                       const Backend& backend) {
  convention.validate();
  const auto blocks = backend.forward(image);
  const int n = static_cast<int>(blocks.size());
  const std::string source = convention_source_id(backend.source_id(), convention);

  std::vector<DenseFeatureMap> maps;
  for (int requested : convention.layer_selector) {
    const int index = requested < 0 ? n + requested : requested;
    if (index < 0 || index >= n) {
      throw ConfigurationError("convention '" + convention.backbone_id + "' asks for layer " +
                               std::to_string(requested) + " but the backbone has " + std::to_string(n) + " layers");
    }
    const auto& block = blocks[static_cast<std::size_t>(index)];
    const Matrix selected = select_attention_features(block, convention.feature_kind, convention.exclude_cls);
    maps.push_back(reshape_to_grid(selected, block.grid_height, block.grid_width, block.stride_px, source));
  }
  if (maps.size() == 1) return std::move(maps.front());

  int target_h = 0, target_w = 0;
  for (const auto& m : maps) {
    target_h = std::max(target_h, m.height_patches);
    target_w = std::max(target_w, m.width_patches);
  }
  return concat_multilayer(maps, target_h, target_w);
}

}  // namespace nls::features
