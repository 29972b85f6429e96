#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nls/diffusion/caption.hpp"
#include "nls/diffusion/codec.hpp"
#include "nls/diffusion/model.hpp"
#include "nls/nn/adam.hpp"

namespace nls::diffusion {

/// Pre-encoded training corpus: latents, caption embeddings and (optionally)
/// layouts brought to latent resolution by the codec.
struct DiffusionData {
  Tensor<float> latents;
  Tensor<float> captions;
  Tensor<float> layouts;

  int size() const { return latents.n(); }
  bool has_layouts() const { return layouts.size() > 0; }
};

inline DiffusionData make_diffusion_data(std::span<const Image> images, std::span<const std::string> captions,
                                         std::span<const layout::NeuralLayout> layouts, const CaptionEncoder& encoder,
                                         const LatentCodec& codec) {
  if (images.empty()) throw ParameterError("diffusion dataset is empty");
  if (captions.size() != images.size() || (!layouts.empty() && layouts.size() != images.size())) {
    throw ShapeError("images, captions and layouts differ in count");
  }
  const int n = static_cast<int>(images.size());
  Tensor<float> pixels(n, 3, images[0].height, images[0].width);
  for (int i = 0; i < n; ++i) image_into(images[static_cast<std::size_t>(i)], pixels, i);
  DiffusionData data;
  data.latents = codec.encode(pixels);
  data.captions = Tensor<float>(n, encoder.dim());
  for (int i = 0; i < n; ++i) {
    const auto e = encoder.encode(captions[static_cast<std::size_t>(i)]);
    std::copy(e.begin(), e.end(), data.captions.sample(i));
  }
  if (!layouts.empty()) {
    const auto& first = layouts.front();
    Tensor<float> raw(n, first.n_components, first.height_px, first.width_px);
    for (int i = 0; i < n; ++i) layout_into(layouts[static_cast<std::size_t>(i)], raw, i);
    data.layouts = codec.encode(raw);
  }
  return data;
}

enum class TrainMode { kBase, kAdapter, kJoint };

inline std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kBase: return "base";
    case TrainMode::kAdapter: return "adapter";
    case TrainMode::kJoint: return "joint";
  }
  return "?";
}

inline TrainMode parse_mode(std::string_view name) {
  for (auto m : {TrainMode::kBase, TrainMode::kAdapter, TrainMode::kJoint}) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigurationError("unknown training mode '" + std::string(name) + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::kBase;
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double caption_dropout = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0) throw ConfigurationError("epochs must be positive");
    if (batch_size <= 0) throw ConfigurationError("batch_size must be positive");
    if (!(learning_rate > 0)) throw ConfigurationError("learning rate must be positive");
    if (caption_dropout < 0 || caption_dropout > 1) throw ConfigurationError("caption_dropout must lie in [0, 1]");
  }
};

struct LossPoint {
  int step = 0;
  double loss = 0;

  friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  Rng rng;  // state after the last step
};

using ProgressFn = std::function<void(int step, int total, double loss)>;

/// Adam on the MSE noise-prediction loss. The batch order, timesteps, noise
/// and caption dropout all come from one seeded stream. In adapter mode the
/// base is frozen for the duration of the call.
inline TrainResult train(Denoiser<float>& base, Adapter<float>* adapter, const DiffusionData& data,
                         const NoiseSchedule& schedule, const TrainConfig& config, const ProgressFn& progress = {}) {
  config.validate();
  if (data.size() == 0) throw ParameterError("diffusion dataset is empty");
  const bool uses_adapter = config.mode != TrainMode::kBase;
  if (uses_adapter && !adapter) throw ConfigurationError("training mode '" + std::string(mode_name(config.mode)) + "' needs an adapter");
  if (uses_adapter && !data.has_layouts()) throw ParameterError("adapter training needs layouts");
  if (schedule.steps != base.config.steps) throw ConsistencyError("schedule length differs from the denoiser's timestep table");

  auto base_params = base.params();
  std::vector<bool> was_frozen;
  for (auto* p : base_params) {
    was_frozen.push_back(p->frozen);
    if (config.mode == TrainMode::kAdapter) p->frozen = true;
  }
  nn::ParamList<float> trainable;
  if (config.mode != TrainMode::kAdapter) trainable = base_params;
  if (uses_adapter) {
    for (auto* p : adapter->params()) trainable.push_back(p);
  }
  nn::Adam<float> optimizer(trainable, nn::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8, config.clip_norm});

  const int n = data.size();
  const int batch = std::min(config.batch_size, n);
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int total = steps_per_epoch * config.epochs;
  TrainResult result{{}, Rng(derive_seed({config.seed, 0x7a1417ULL}))};
  auto& rng = result.rng;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<int> timestep(1, schedule.steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t latent_size = static_cast<std::size_t>(data.latents.c()) * data.latents.plane();
  const std::size_t layout_size = data.has_layouts() ? static_cast<std::size_t>(data.layouts.c()) * data.layouts.plane() : 0;

  std::vector<int> order(static_cast<std::size_t>(n));
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += batch) {
      const int m = std::min(batch, n - start);
      TrainingBatch<float> b;
      b.z0 = Tensor<float>(m, data.latents.c(), data.latents.h(), data.latents.w());
      b.eps = Tensor<float>(m, data.latents.c(), data.latents.h(), data.latents.w());
      b.captions = Tensor<float>(m, data.captions.c());
      if (uses_adapter) b.layouts = Tensor<float>(m, data.layouts.c(), data.layouts.h(), data.layouts.w());
      for (int i = 0; i < m; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        std::copy_n(data.latents.sample(src), latent_size, b.z0.sample(i));
        if (uses_adapter) std::copy_n(data.layouts.sample(src), layout_size, b.layouts.sample(i));
        b.t.push_back(timestep(rng));
        const bool drop = unit(rng) < config.caption_dropout;
        if (!drop) std::copy_n(data.captions.sample(src), data.captions.c(), b.captions.sample(i));
      }
      for (auto& v : b.eps.data) v = normal(rng);

      optimizer.zero_grad();
      nn::Graph<float> g;
      auto loss = training_loss(g, b, schedule, base, uses_adapter ? adapter : nullptr);
      g.backward(loss);
      optimizer.step();
      ++step;
      result.curve.push_back({step, static_cast<double>(loss->value.data[0])});
      if (progress) progress(step, total, loss->value.data[0]);
    }
  }
  for (std::size_t i = 0; i < base_params.size(); ++i) base_params[i]->frozen = was_frozen[i];
  return result;
}

}  // namespace nls::diffusion
