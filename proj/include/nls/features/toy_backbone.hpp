#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nls/core/error.hpp"
#include "nls/core/image.hpp"
#include "nls/core/random.hpp"
#include "nls/features/attention.hpp"

namespace nls::features {

/// Architecture of the built-in stand-in for a frozen foundation model: a
/// random patch embedder followed by a stack of attention blocks. Each block
/// may run on a coarser token grid (`pool_per_layer`), which gives the
/// multi-resolution stack that diffusion-U-Net style conventions expect.
struct ToyBackboneSpec {
  std::uint64_t seed = 1234;
  int patch_size_px = 4;
  std::vector<int> channels_per_layer{32, 32, 32};
  std::vector<int> pool_per_layer{};  // empty: every layer at patch resolution
  bool with_cls = true;
  int cross_dim = 0;  // width of the optional cross-attention input; 0 disables it

  int layer_count() const { return static_cast<int>(channels_per_layer.size()); }
  int pool(int layer) const { return pool_per_layer.empty() ? 1 : pool_per_layer[static_cast<std::size_t>(layer)]; }

  void validate() const {
    if (patch_size_px <= 0) throw ConfigurationError("patch_size_px must be positive");
    if (channels_per_layer.empty()) throw ConfigurationError("toy backbone needs at least one layer");
    for (int c : channels_per_layer) {
      if (c <= 0) throw ConfigurationError("layer channels must be positive");
    }
    if (!pool_per_layer.empty() && pool_per_layer.size() != channels_per_layer.size()) {
      throw ConfigurationError("pool_per_layer must match channels_per_layer in length");
    }
    for (int p : pool_per_layer) {
      if (p <= 0) throw ConfigurationError("pool factors must be positive");
    }
    if (cross_dim < 0) throw ConfigurationError("cross_dim must be non-negative");
  }

  std::string source_id() const {
    std::string id = "toyvit:seed=" + std::to_string(seed) + ":patch=" + std::to_string(patch_size_px) + ":layers=";
    for (int l = 0; l < layer_count(); ++l) {
      if (l) id += ',';
      id += std::to_string(channels_per_layer[static_cast<std::size_t>(l)]) + '/' + std::to_string(pool(l));
    }
    if (!with_cls) id += ":nocls";
    return id;
  }
};

struct ToyLayerWeights {
  int in_channels = 0;
  int channels = 0;
  Matrix query;       // in x C   (W_q)
  Matrix key;         // in x C   (W_k)
  Matrix value;       // in x C   (W_v)
  Matrix output;      // C x C
  Matrix residual;    // in x C, empty when in == C
  Matrix mlp_in;      // C x 2C
  Matrix mlp_out;     // 2C x C
  Matrix cross_key;   // cross_dim x C
  Matrix cross_value; // cross_dim x C
};

/// Weights are a pure function of the spec (and hence of the seed).
struct ToyBackboneParams {
  ToyBackboneSpec spec;
  Matrix patch_embedding;  // 3 p^2 x C0
  Eigen::RowVectorXf cls_token;
  std::vector<ToyLayerWeights> layers;
};

namespace detail {

inline Matrix random_matrix(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(normal(rng));
  return m;
}

inline Matrix layer_norm(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).mean();
    const float var = (x.row(r).array() - mean).square().mean();
    out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + 1e-5f);
  }
  return out;
}

inline Matrix gelu(const Matrix& x) {
  constexpr float k = 0.7978845608f;  // sqrt(2/pi)
  return x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::tanh(k * (v + 0.044715f * v * v * v))); });
}

inline Matrix softmax_rows(Matrix logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const float m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

// Resamples patch tokens between square grids whose sizes differ by an
// integer ratio: average pooling to coarser grids, replication to finer ones.
inline Matrix resample_tokens(const Matrix& tokens, int from_h, int from_w, int to_h, int to_w) {
  if (from_h == to_h && from_w == to_w) return tokens;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(to_h) * to_w, tokens.cols());
  if (to_h <= from_h) {
    const int ry = from_h / to_h, rx = from_w / to_w;
    for (int y = 0; y < from_h; ++y) {
      for (int x = 0; x < from_w; ++x) out.row((y / ry) * to_w + x / rx) += tokens.row(y * from_w + x);
    }
    out /= static_cast<float>(ry * rx);
  } else {
    const int ry = to_h / from_h, rx = to_w / from_w;
    for (int y = 0; y < to_h; ++y) {
      for (int x = 0; x < to_w; ++x) out.row(y * to_w + x) = tokens.row((y / ry) * from_w + x / rx);
    }
  }
  return out;
}

}  // namespace detail

inline ToyBackboneParams make_toy_backbone(const ToyBackboneSpec& spec) {
  spec.validate();
  ToyBackboneParams params;
  params.spec = spec;
  Rng rng(derive_seed({spec.seed, 0xbac4b0eULL}));
  const int c0 = spec.channels_per_layer.front();
  const int patch_dim = 3 * spec.patch_size_px * spec.patch_size_px;
  params.patch_embedding = detail::random_matrix(rng, patch_dim, c0);
  params.cls_token = detail::random_matrix(rng, 1, c0).row(0);
  int in = c0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    ToyLayerWeights w;
    w.in_channels = in;
    w.channels = spec.channels_per_layer[static_cast<std::size_t>(l)];
    w.query = detail::random_matrix(rng, in, w.channels);
    w.key = detail::random_matrix(rng, in, w.channels);
    w.value = detail::random_matrix(rng, in, w.channels);
    w.output = detail::random_matrix(rng, w.channels, w.channels);
    if (in != w.channels) w.residual = detail::random_matrix(rng, in, w.channels);
    w.mlp_in = detail::random_matrix(rng, w.channels, 2 * w.channels);
    w.mlp_out = detail::random_matrix(rng, 2 * w.channels, w.channels);
    if (spec.cross_dim > 0) {
      w.cross_key = detail::random_matrix(rng, spec.cross_dim, w.channels);
      w.cross_value = detail::random_matrix(rng, spec.cross_dim, w.channels);
    }
    params.layers.push_back(std::move(w));
    in = params.layers.back().channels;
  }
  return params;
}

/// One AttentionBlockOutput per layer; deterministic in (image, params).
inline std::vector<AttentionBlockOutput> toy_backbone_forward(const Image& image, const ToyBackboneParams& params,
                                                              const Matrix* cross_input = nullptr) {
  const auto& spec = params.spec;
  const int p = spec.patch_size_px;
  if (image.width % p != 0 || image.height % p != 0) {
    throw DimensionError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible by patch size " + std::to_string(p));
  }
  const int gh = image.height / p;
  const int gw = image.width / p;
  for (int l = 0; l < spec.layer_count(); ++l) {
    if (gh % spec.pool(l) != 0 || gw % spec.pool(l) != 0) {
      throw DimensionError("patch grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                           " is not divisible by layer " + std::to_string(l) + " pool " +
                           std::to_string(spec.pool(l)));
    }
  }
  if (cross_input && (spec.cross_dim == 0 || cross_input->cols() != spec.cross_dim)) {
    throw ShapeError("cross input width " + std::to_string(cross_input->cols()) + " does not match cross_dim " +
                     std::to_string(spec.cross_dim));
  }

  // Patch embedding with a small fixed 2-D sinusoidal position code.
  const int c0 = spec.channels_per_layer.front();
  Matrix pixels(static_cast<Eigen::Index>(gh) * gw, 3 * p * p);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      int col = 0;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          const auto* rgb = image.pixel(py * p + y, px * p + x);
          for (int c = 0; c < 3; ++c) pixels(py * gw + px, col++) = rgb[c] / 127.5f - 1.0f;
        }
      }
    }
  }
  Matrix patches = pixels * params.patch_embedding;
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      for (int c = 0; c < c0; ++c) {
        const double freq = std::pow(100.0, -static_cast<double>(c / 4 * 4) / c0);
        const double pos = (c % 4 < 2 ? py : px) * freq;
        patches(py * gw + px, c) += static_cast<float>(0.1 * ((c % 2) ? std::cos(pos) : std::sin(pos)));
      }
    }
  }

  std::vector<AttentionBlockOutput> outputs;
  Eigen::RowVectorXf cls = params.cls_token;
  int cur_h = gh, cur_w = gw;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto& w = params.layers[static_cast<std::size_t>(l)];
    const int lh = gh / spec.pool(l), lw = gw / spec.pool(l);
    patches = detail::resample_tokens(patches, cur_h, cur_w, lh, lw);
    cur_h = lh;
    cur_w = lw;

    Matrix x(patches.rows() + (spec.with_cls ? 1 : 0), patches.cols());
    if (spec.with_cls) {
      x.row(0) = cls;
      x.bottomRows(patches.rows()) = patches;
    } else {
      x = patches;
    }

    AttentionBlockOutput out;
    out.has_cls = spec.with_cls;
    out.grid_height = lh;
    out.grid_width = lw;
    out.stride_px = p * spec.pool(l);
    const Matrix h = detail::layer_norm(x);
    out.queries = h * w.query;
    out.keys = h * w.key;
    out.values = h * w.value;
    const float scale = 1.0f / std::sqrt(static_cast<float>(w.channels));
    Matrix attn = detail::softmax_rows((out.queries * out.keys.transpose()) * scale);
    Matrix mixed = attn * out.values;
    if (cross_input) {
      out.cross_input = *cross_input;
      out.cross_keys = (*cross_input) * w.cross_key;
      out.cross_values = (*cross_input) * w.cross_value;
      Matrix cross_attn = detail::softmax_rows((out.queries * out.cross_keys->transpose()) * scale);
      mixed += cross_attn * *out.cross_values;
    }
    Matrix r = (w.residual.size() ? Matrix(x * w.residual) : x) + mixed * w.output;
    out.tokens = r + detail::gelu(detail::layer_norm(r) * w.mlp_in) * w.mlp_out;

    if (spec.with_cls) {
      cls = out.tokens.row(0);
      patches = out.tokens.bottomRows(out.tokens.rows() - 1);
    } else {
      patches = out.tokens;
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

/// Convenience wrapper that owns its parameters.
class ToyBackbone {
 public:
  explicit ToyBackbone(const ToyBackboneSpec& spec) : params_(make_toy_backbone(spec)) {}

  std::vector<AttentionBlockOutput> forward(const Image& image) const { return toy_backbone_forward(image, params_); }
  std::string source_id() const { return params_.spec.source_id(); }
  const ToyBackboneParams& params() const { return params_; }
  int layer_count() const { return params_.spec.layer_count(); }

  /// Mean of the last layer's patch tokens; the perceptual embedding used by
  /// the Fréchet and diversity metrics.
  Eigen::VectorXd pooled_features(const Image& image) const {
    const auto blocks = forward(image);
    const auto patches = select_attention_features(blocks.back(), FeatureKind::kToken, true);
    return patches.colwise().mean().transpose().cast<double>();
  }

 private:
  ToyBackboneParams params_;
};

}  // namespace nls::features
