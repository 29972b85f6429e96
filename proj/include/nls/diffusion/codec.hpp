#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nls/core/image.hpp"
#include "nls/layout/neural_layout.hpp"
#include "nls/nn/tensor.hpp"

namespace nls::diffusion {

using nn::Tensor;

/// Pixels map to [-1, 1] as v / 127.5 - 1.
inline void image_into(const Image& image, Tensor<float>& batch, int index) {
  if (batch.c() != 3 || batch.h() != image.height || batch.w() != image.width) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " does not fit batch " + nn::shape_string(batch.shape));
  }
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) batch.at(index, c, y, x) = image.pixel(y, x)[c] / 127.5f - 1.0f;
    }
  }
}

inline Image image_from(const Tensor<float>& batch, int index) {
  Image out(batch.w(), batch.h());
  for (int y = 0; y < batch.h(); ++y) {
    for (int x = 0; x < batch.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(batch.at(index, c, y, x), -1.0f, 1.0f);
        out.pixel(y, x)[c] = static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
      }
    }
  }
  return out;
}

inline void layout_into(const layout::NeuralLayout& layout, Tensor<float>& batch, int index) {
  if (batch.c() != layout.n_components || batch.h() != layout.height_px || batch.w() != layout.width_px) {
    throw ShapeError("layout " + std::to_string(layout.height_px) + "x" + std::to_string(layout.width_px) + "x" +
                     std::to_string(layout.n_components) + " does not fit batch " + nn::shape_string(batch.shape));
  }
  for (int y = 0; y < layout.height_px; ++y) {
    for (int x = 0; x < layout.width_px; ++x) {
      for (int c = 0; c < layout.n_components; ++c) batch.at(index, c, y, x) = layout.at(y, x, c);
    }
  }
}

enum class CodecMode { kIdentity, kAvgPool };

/// Stand-in for a latent autoencoder: identity, or k x k average pooling
/// with nearest-neighbour unpooling.
struct LatentCodec {
  CodecMode mode = CodecMode::kIdentity;
  int factor = 1;

  static LatentCodec identity() { return {}; }
  static LatentCodec avg_pool(int k) {
    if (k < 1) throw ParameterError("codec factor must be positive");
    return {k == 1 ? CodecMode::kIdentity : CodecMode::kAvgPool, k};
  }

  std::string name() const { return mode == CodecMode::kIdentity ? "identity" : "avgpool-" + std::to_string(factor); }

  int latent_size(int pixels) const {
    if (pixels % factor != 0) {
      throw ShapeError("resolution " + std::to_string(pixels) + " is not divisible by codec factor " +
                       std::to_string(factor));
    }
    return pixels / factor;
  }

  Tensor<float> encode(const Tensor<float>& x) const {
    if (mode == CodecMode::kIdentity) return x;
    const int k = factor;
    Tensor<float> z(x.n(), x.c(), latent_size(x.h()), latent_size(x.w()));
    const float inv = 1.0f / static_cast<float>(k * k);
    for (int i = 0; i < x.n(); ++i) {
      for (int c = 0; c < x.c(); ++c) {
        for (int y = 0; y < x.h(); ++y) {
          for (int xx = 0; xx < x.w(); ++xx) z.at(i, c, y / k, xx / k) += x.at(i, c, y, xx) * inv;
        }
      }
    }
    return z;
  }

  Tensor<float> decode(const Tensor<float>& z) const {
    if (mode == CodecMode::kIdentity) return z;
    const int k = factor;
    Tensor<float> x(z.n(), z.c(), z.h() * k, z.w() * k);
    for (int i = 0; i < x.n(); ++i) {
      for (int c = 0; c < x.c(); ++c) {
        for (int y = 0; y < x.h(); ++y) {
          for (int xx = 0; xx < x.w(); ++xx) x.at(i, c, y, xx) = z.at(i, c, y / k, xx / k);
        }
      }
    }
    return x;
  }
};

inline LatentCodec parse_codec(const std::string& name) {
  if (name == "identity") return LatentCodec::identity();
  if (name.rfind("avgpool-", 0) == 0) return LatentCodec::avg_pool(std::stoi(name.substr(8)));
  throw ConfigurationError("unknown codec '" + name + "'");
}

}  // namespace nls::diffusion
