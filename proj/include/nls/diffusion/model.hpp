#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nls/diffusion/schedule.hpp"
#include "nls/nn/layers.hpp"

namespace nls::diffusion {

using nn::Graph;
using nn::Var;

struct DenoiserConfig {
  int resolution = 32;  // latent side length the network runs at
  int image_channels = 3;
  std::array<int, 3> channels{16, 32, 64};
  int groups = 8;
  int time_dim = 32;
  int emb_dim = 64;
  int caption_dim = 32;
  int steps = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (resolution < 4 || resolution % 4 != 0) {
      throw ConfigurationError("denoiser resolution must be a positive multiple of 4, got " + std::to_string(resolution));
    }
    for (int c : channels) {
      if (c <= 0 || c % std::min(groups, c) != 0) throw ConfigurationError("channel widths must divide into groups");
    }
    if (time_dim < 2 || time_dim % 2 != 0) throw ConfigurationError("time_dim must be even and >= 2");
    if (emb_dim <= 0 || caption_dim <= 0 || steps < 2 || image_channels <= 0) {
      throw ConfigurationError("denoiser dimensions must be positive");
    }
  }
};

/// Fixed sinusoidal table, row t - 1 for timestep t.
template <typename T>
nn::Tensor<T> timestep_table(int steps, int dim) {
  nn::Tensor<T> table(steps, dim);
  const int half = dim / 2;
  for (int t = 1; t <= steps; ++t) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      table.at(t - 1, i) = static_cast<T>(std::sin(t * freq));
      table.at(t - 1, half + i) = static_cast<T>(std::cos(t * freq));
    }
  }
  return table;
}

/// Skip activations of the encoder path at full, half and quarter resolution.
template <typename T>
struct Skips {
  Var<T> s1;
  Var<T> s2;
  Var<T> h3;
};

/// Small U-shaped noise predictor conditioned on timestep and caption.
template <typename T>
struct Denoiser {
  DenoiserConfig config;
  nn::Tensor<T> time_table;
  nn::Linear<T> time_proj;
  nn::Linear<T> caption_proj;
  nn::Linear<T> emb_out;
  nn::Conv2d<T> conv_in;
  nn::ResBlock<T> res1, res2, res3, res4, res5;
  nn::GroupNorm<T> norm_out;
  nn::Conv2d<T> conv_out;

  explicit Denoiser(const DenoiserConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(derive_seed({cfg.seed, 0xde0153ULL}));
    const auto [c1, c2, c3] = cfg.channels;
    const int e = cfg.emb_dim, g = cfg.groups;
    time_table = timestep_table<T>(cfg.steps, cfg.time_dim);
    time_proj = nn::Linear<T>("base.time_proj", cfg.time_dim, e, rng);
    caption_proj = nn::Linear<T>("base.caption_proj", cfg.caption_dim, e, rng);
    emb_out = nn::Linear<T>("base.emb_out", e, e, rng);
    conv_in = nn::Conv2d<T>("base.conv_in", cfg.image_channels, c1, 3, rng);
    res1 = nn::ResBlock<T>("base.res1", c1, c1, e, g, rng);
    res2 = nn::ResBlock<T>("base.res2", c1, c2, e, g, rng);
    res3 = nn::ResBlock<T>("base.res3", c2, c3, e, g, rng);
    res4 = nn::ResBlock<T>("base.res4", c3 + c2, c2, e, g, rng);
    res5 = nn::ResBlock<T>("base.res5", c2 + c1, c1, e, g, rng);
    norm_out = nn::GroupNorm<T>("base.norm_out", c1, std::min(g, c1));
    conv_out = nn::Conv2d<T>("base.conv_out", c1, cfg.image_channels, 3, rng, true);
  }

  Var<T> embed(Graph<T>& g, std::span<const int> timesteps, const nn::Tensor<T>& captions) {
    nn::Tensor<T> rows(static_cast<int>(timesteps.size()), config.time_dim);
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
      const int t = timesteps[i];
      if (t < 1 || t > config.steps) throw ParameterError("timestep " + std::to_string(t) + " out of range");
      for (int k = 0; k < config.time_dim; ++k) rows.at(static_cast<int>(i), k) = time_table.at(t - 1, k);
    }
    if (captions.n() != static_cast<int>(timesteps.size()) || captions.c() != config.caption_dim) {
      throw ShapeError("caption batch " + nn::shape_string(captions.shape) + " does not match the timesteps");
    }
    auto h = nn::add(g, time_proj(g, g.constant(std::move(rows))), caption_proj(g, g.constant(captions)));
    return nn::silu(g, emb_out(g, nn::silu(g, h)));
  }

  Skips<T> encode(Graph<T>& g, Var<T> x, Var<T> emb) {
    Skips<T> s;
    s.s1 = res1(g, conv_in(g, x), emb);
    s.s2 = res2(g, nn::avg_pool2(g, s.s1), emb);
    s.h3 = res3(g, nn::avg_pool2(g, s.s2), emb);
    return s;
  }

  Var<T> decode(Graph<T>& g, const Skips<T>& s, Var<T> emb) {
    auto d2 = res4(g, nn::concat_channels(g, nn::upsample2(g, s.h3), s.s2), emb);
    auto d1 = res5(g, nn::concat_channels(g, nn::upsample2(g, d2), s.s1), emb);
    return conv_out(g, nn::silu(g, norm_out(g, d1)));
  }

  template <typename F>
  void visit_encoder(F&& f) {
    conv_in.visit(f);
    res1.visit(f);
    res2.visit(f);
    res3.visit(f);
  }

  template <typename F>
  void visit(F&& f) {
    time_proj.visit(f);
    caption_proj.visit(f);
    emb_out.visit(f);
    visit_encoder(f);
    res4.visit(f);
    res5.visit(f);
    norm_out.visit(f);
    conv_out.visit(f);
  }

  nn::ParamList<T> params() { return nn::collect<T>(*this); }
};

/// Trainable copy of the encoder path that also sees the layout through a
/// small hint network. Its outputs reach the base through zero-initialized
/// 1x1 couplings, so a fresh adapter changes nothing.
template <typename T>
struct Adapter {
  int layout_channels = 0;
  nn::Conv2d<T> hint1, hint2;
  nn::Conv2d<T> conv_in;
  nn::ResBlock<T> res1, res2, res3;
  nn::Conv2d<T> couple1, couple2, couple3;

  Adapter(Denoiser<T>& base, int layout_channels_, std::uint64_t seed) : layout_channels(layout_channels_) {
    if (layout_channels <= 0) throw ConfigurationError("adapter needs at least one layout channel");
    const auto& cfg = base.config;
    const auto [c1, c2, c3] = cfg.channels;
    Rng rng(derive_seed({seed, 0xada97e7ULL}));
    hint1 = nn::Conv2d<T>("adapter.hint1", layout_channels, c1, 3, rng);
    hint2 = nn::Conv2d<T>("adapter.hint2", c1, c1, 3, rng);
    conv_in = nn::Conv2d<T>("adapter.conv_in", cfg.image_channels, c1, 3, rng);
    res1 = nn::ResBlock<T>("adapter.res1", c1, c1, cfg.emb_dim, cfg.groups, rng);
    res2 = nn::ResBlock<T>("adapter.res2", c1, c2, cfg.emb_dim, cfg.groups, rng);
    res3 = nn::ResBlock<T>("adapter.res3", c2, c3, cfg.emb_dim, cfg.groups, rng);
    couple1 = nn::Conv2d<T>("adapter.couple1", c1, c1, 1, rng, true);
    couple2 = nn::Conv2d<T>("adapter.couple2", c2, c2, 1, rng, true);
    couple3 = nn::Conv2d<T>("adapter.couple3", c3, c3, 1, rng, true);
    nn::ParamList<T> from, to;
    base.visit_encoder([&](nn::Param<T>& p) { from.push_back(&p); });
    visit_encoder([&](nn::Param<T>& p) { to.push_back(&p); });
    nn::copy_values(from, to);
  }

  Skips<T> residuals(Graph<T>& g, Var<T> x, Var<T> emb, Var<T> layout) {
    auto hint = hint2(g, nn::silu(g, hint1(g, layout)));
    auto a1 = res1(g, nn::add(g, conv_in(g, x), hint), emb);
    auto a2 = res2(g, nn::avg_pool2(g, a1), emb);
    auto a3 = res3(g, nn::avg_pool2(g, a2), emb);
    return {couple1(g, a1), couple2(g, a2), couple3(g, a3)};
  }

  template <typename F>
  void visit_encoder(F&& f) {
    conv_in.visit(f);
    res1.visit(f);
    res2.visit(f);
    res3.visit(f);
  }

  template <typename F>
  void visit(F&& f) {
    hint1.visit(f);
    hint2.visit(f);
    visit_encoder(f);
    couple1.visit(f);
    couple2.visit(f);
    couple3.visit(f);
  }

  template <typename F>
  void visit_couplings(F&& f) {
    couple1.visit(f);
    couple2.visit(f);
    couple3.visit(f);
  }

  nn::ParamList<T> params() { return nn::collect<T>(*this); }
};

/// eps_theta(z_t, t, c_t, c_i) as a graph node. `layout` is ignored without an adapter.
template <typename T>
Var<T> predict_noise(Graph<T>& g, Denoiser<T>& base, Adapter<T>* adapter, const nn::Tensor<T>& z_t,
                     std::span<const int> timesteps, const nn::Tensor<T>& captions, const nn::Tensor<T>* layout) {
  const auto& cfg = base.config;
  if (z_t.c() != cfg.image_channels || z_t.h() != cfg.resolution || z_t.w() != cfg.resolution) {
    throw ShapeError("latent batch " + nn::shape_string(z_t.shape) + " does not match the configured " +
                     std::to_string(cfg.resolution) + "px resolution");
  }
  auto emb = base.embed(g, timesteps, captions);
  auto x = g.constant(z_t);
  auto skips = base.encode(g, x, emb);
  if (adapter) {
    if (!layout) throw ShapeError("adapter prediction needs a layout batch");
    if (layout->n() != z_t.n() || layout->c() != adapter->layout_channels || layout->h() != z_t.h() ||
        layout->w() != z_t.w()) {
      throw ShapeError("layout batch " + nn::shape_string(layout->shape) + " does not match latent batch " +
                       nn::shape_string(z_t.shape) + " with " + std::to_string(adapter->layout_channels) + " channels");
    }
    auto r = adapter->residuals(g, x, emb, g.constant(*layout));
    skips.s1 = nn::add(g, skips.s1, r.s1);
    skips.s2 = nn::add(g, skips.s2, r.s2);
    skips.h3 = nn::add(g, skips.h3, r.h3);
  }
  return base.decode(g, skips, emb);
}

/// Inference-only prediction.
template <typename T>
nn::Tensor<T> denoise_predict(Denoiser<T>& base, Adapter<T>* adapter, const nn::Tensor<T>& z_t,
                              std::span<const int> timesteps, const nn::Tensor<T>& captions,
                              const nn::Tensor<T>* layout) {
  Graph<T> g(false);
  return predict_noise(g, base, adapter, z_t, timesteps, captions, layout)->value;
}

template <typename T>
struct TrainingBatch {
  nn::Tensor<T> z0;
  nn::Tensor<T> eps;
  std::vector<int> t;
  nn::Tensor<T> captions;
  nn::Tensor<T> layouts;  // empty when training without layouts

  void validate(const NoiseSchedule& schedule) const {
    const int n = z0.n();
    if (!z0.same_shape(eps)) throw ShapeError("eps shape differs from z0");
    if (static_cast<int>(t.size()) != n || captions.n() != n || (layouts.size() && layouts.n() != n)) {
      throw ShapeError("training batch members disagree on batch size");
    }
    for (int v : t) schedule.check_timestep(v);
  }
};

/// Builds z_t from the batch and returns mean((eps - eps_theta)^2).
template <typename T>
Var<T> training_loss(Graph<T>& g, const TrainingBatch<T>& batch, const NoiseSchedule& schedule, Denoiser<T>& base,
                     Adapter<T>* adapter) {
  batch.validate(schedule);
  nn::Tensor<T> z_t(batch.z0.n(), batch.z0.c(), batch.z0.h(), batch.z0.w());
  const std::size_t per = static_cast<std::size_t>(z_t.c()) * z_t.plane();
  for (int i = 0; i < z_t.n(); ++i) {
    forward_noise<T>(std::span<const T>(batch.z0.sample(i), per), batch.t[static_cast<std::size_t>(i)],
                     std::span<const T>(batch.eps.sample(i), per), schedule, std::span<T>(z_t.sample(i), per));
  }
  const nn::Tensor<T>* layouts = batch.layouts.size() ? &batch.layouts : nullptr;
  return nn::mse(g, predict_noise(g, base, adapter, z_t, batch.t, batch.captions, layouts), batch.eps);
}

}  // namespace nls::diffusion
