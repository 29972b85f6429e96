#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "nls/diffusion/codec.hpp"
#include "nls/diffusion/model.hpp"

namespace nls::diffusion {

/// One image to draw. All requests in a call either carry a layout (adapter
/// sampling) or none (base only).
struct SampleRequest {
  CaptionEmbedding caption;
  const layout::NeuralLayout* layout = nullptr;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

/// Ancestral DDPM: x0 is re-estimated and clipped to [-1, 1] at every step
/// and the posterior mean/variance give x_{t-1}. Each image draws its start
/// noise and step noise from its own (seed, index) stream, so results do not
/// depend on how requests are chunked.
inline std::vector<Image> sample_images(Denoiser<float>& base, Adapter<float>* adapter, const NoiseSchedule& schedule,
                                        const LatentCodec& codec, std::span<const SampleRequest> requests,
                                        int chunk = 32) {
  if (schedule.steps != base.config.steps) throw ConsistencyError("schedule length differs from the denoiser's timestep table");
  const int res = base.config.resolution, ch = base.config.image_channels;
  const std::size_t per = static_cast<std::size_t>(ch) * res * res;
  std::vector<Image> images;
  images.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += static_cast<std::size_t>(chunk)) {
    const auto batch = requests.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(chunk), requests.size() - start));
    const int n = static_cast<int>(batch.size());
    std::vector<Rng> rngs;
    Tensor<float> x(n, ch, res, res), captions(n, base.config.caption_dim), layouts;
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (int i = 0; i < n; ++i) {
      const auto& r = batch[static_cast<std::size_t>(i)];
      rngs.emplace_back(derive_seed({r.seed, r.index, 0x5a4b1eULL}));
      for (std::size_t k = 0; k < per; ++k) x.sample(i)[k] = normal(rngs.back());
      if (static_cast<int>(r.caption.size()) != base.config.caption_dim) throw ShapeError("caption embedding width mismatch");
      std::copy(r.caption.begin(), r.caption.end(), captions.sample(i));
    }
    if (adapter) {
      const auto* first = batch.front().layout;
      if (!first) throw ParameterError("adapter sampling needs a layout for every request");
      Tensor<float> raw(n, first->n_components, first->height_px, first->width_px);
      for (int i = 0; i < n; ++i) {
        const auto* l = batch[static_cast<std::size_t>(i)].layout;
        if (!l) throw ParameterError("adapter sampling needs a layout for every request");
        layout_into(*l, raw, i);
      }
      layouts = codec.encode(raw);
    }

    std::vector<int> ts(static_cast<std::size_t>(n));
    for (int t = schedule.steps; t >= 1; --t) {
      std::fill(ts.begin(), ts.end(), t);
      const auto eps = denoise_predict(base, adapter, x, ts, captions, adapter ? &layouts : nullptr);
      const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(t - 1), beta = schedule.beta(t);
      const double c0 = beta * std::sqrt(ab_prev) / (1 - ab);
      const double ct = (1 - ab_prev) * std::sqrt(1 - beta) / (1 - ab);
      const double sigma = std::sqrt(beta * (1 - ab_prev) / (1 - ab));
      for (int i = 0; i < n; ++i) {
        float* xi = x.sample(i);
        const float* ei = eps.sample(i);
        for (std::size_t k = 0; k < per; ++k) {
          const double x0 = std::clamp((xi[k] - std::sqrt(1 - ab) * ei[k]) / std::sqrt(ab), -1.0, 1.0);
          double next = c0 * x0 + ct * xi[k];
          if (t > 1) next += sigma * normal(rngs[static_cast<std::size_t>(i)]);
          xi[k] = static_cast<float>(next);
        }
      }
    }
    const auto pixels = codec.decode(x);
    for (int i = 0; i < n; ++i) images.push_back(image_from(pixels, i));
  }
  return images;
}

/// num_images draws for one caption (and optional layout), indices 0..n-1.
inline std::vector<Image> sample(Denoiser<float>& base, Adapter<float>* adapter, const CaptionEmbedding& caption,
                                 const layout::NeuralLayout* layout, const NoiseSchedule& schedule,
                                 const LatentCodec& codec, std::uint64_t seed, int num_images) {
  if (num_images <= 0) throw ParameterError("num_images must be positive");
  std::vector<SampleRequest> requests;
  for (int i = 0; i < num_images; ++i) requests.push_back({caption, layout, seed, static_cast<std::uint64_t>(i)});
  return sample_images(base, adapter, schedule, codec, requests);
}

}  // namespace nls::diffusion
