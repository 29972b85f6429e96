#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nls/core/random.hpp"
#include "nls/eval/metrics.hpp"
#include "nls/nn/adam.hpp"
#include "nls/nn/layers.hpp"
#include "nls/nn/param_io.hpp"
#include "nls/scenes/scene.hpp"

namespace nls::eval {

using nn::Graph;
using nn::Tensor;
using nn::Var;

struct ProbeConfig {
  std::array<int, 2> channels{16, 32};
  int groups = 4;
  int steps = 2500;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double depth_weight = 1.0;
  double max_noise = 0.15;  // per-sample noise sd drawn from [0, max_noise] in [-1, 1] pixel units
  double min_miou = 0.90;
  double max_si_depth = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    for (int c : channels) {
      if (c <= 0 || c % std::min(groups, c) != 0) throw ConfigurationError("probe channels must divide into groups");
    }
    if (steps <= 0 || batch_size <= 0) throw ConfigurationError("probe steps and batch_size must be positive");
    if (!(learning_rate > 0)) throw ConfigurationError("probe learning rate must be positive");
    if (max_noise < 0) throw ConfigurationError("probe max_noise must be non-negative");
  }
};

/// Small U-shaped network with a shared trunk and two heads: per-pixel class
/// logits and log depth.
template <typename T>
struct ProbeNet {
  nn::Conv2d<T> conv_in;
  nn::ResBlock<T> down1, down2, mid, up2, up1;
  nn::GroupNorm<T> norm_out;
  nn::Conv2d<T> head;

  ProbeNet() = default;
  ProbeNet(const ProbeConfig& cfg, Rng& rng) {
    const int c1 = cfg.channels[0], c2 = cfg.channels[1], g = cfg.groups;
    conv_in = nn::Conv2d<T>("probe.conv_in", 3, c1, 3, rng);
    down1 = nn::ResBlock<T>("probe.down1", c1, c1, 0, g, rng);
    down2 = nn::ResBlock<T>("probe.down2", c1, c2, 0, g, rng);
    mid = nn::ResBlock<T>("probe.mid", c2, c2, 0, g, rng);
    up2 = nn::ResBlock<T>("probe.up2", 2 * c2, c2, 0, g, rng);
    up1 = nn::ResBlock<T>("probe.up1", c2 + c1, c1, 0, g, rng);
    norm_out = nn::GroupNorm<T>("probe.norm_out", c1, std::min(g, c1));
    head = nn::Conv2d<T>("probe.head", c1, scenes::kNumClasses + 1, 1, rng);
  }

  /// Output channels 0..K-1 are class logits, channel K is log depth.
  Var<T> operator()(Graph<T>& g, Var<T> x) {
    auto s1 = down1(g, conv_in(g, x), nullptr);
    auto s2 = down2(g, nn::avg_pool2(g, s1), nullptr);
    auto h = mid(g, nn::avg_pool2(g, s2), nullptr);
    h = up2(g, nn::concat_channels(g, nn::upsample2(g, h), s2), nullptr);
    h = up1(g, nn::concat_channels(g, nn::upsample2(g, h), s1), nullptr);
    return head(g, nn::silu(g, norm_out(g, h)));
  }

  template <typename F>
  void visit(F&& f) {
    conv_in.visit(f);
    down1.visit(f);
    down2.visit(f);
    mid.visit(f);
    up2.visit(f);
    up1.visit(f);
    norm_out.visit(f);
    head.visit(f);
  }

  nn::ParamList<T> params() { return nn::collect<T>(*this); }
};

struct ProbeQuality {
  double miou = 0;
  double si_depth = 0;
  int n_samples = 0;
};

struct Probe {
  ProbeConfig config;
  ProbeNet<float> net;
  std::vector<double> loss_curve;
  ProbeQuality quality;

  bool meets_gate() const { return quality.miou >= config.min_miou && quality.si_depth < config.max_si_depth; }
};

struct ProbeOutput {
  ClassMap semantics;
  DepthMap depth;
};

namespace detail {

inline void pixels_into(const Image& image, Tensor<float>& x, int i) {
  const std::size_t hw = x.plane();
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) x.sample(i)[static_cast<std::size_t>(c) * hw + p] = image.rgb[p * 3 + static_cast<std::size_t>(c)] / 127.5f - 1.0f;
  }
}

inline void require_probe_input(const Image& image) {
  if (image.width != image.height || image.width % 4 != 0 || image.width == 0) {
    throw ShapeError("probe input must be square with a side divisible by 4, got " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  }
}

// The exponent is bounded so the depth stays finite and strictly positive.
inline float depth_from_log(float z) { return std::exp(std::clamp(z, -20.0f, 5.0f)); }

}  // namespace detail

/// Runs the probe on equally sized images in chunks.
inline std::vector<ProbeOutput> run_probe(Probe& probe, std::span<const Image> images, int chunk = 32) {
  std::vector<ProbeOutput> out;
  out.reserve(images.size());
  constexpr int k = scenes::kNumClasses;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const auto batch = images.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(chunk), images.size() - start));
    const int n = static_cast<int>(batch.size()), res = batch.front().width;
    Tensor<float> x(n, 3, res, res);
    for (int i = 0; i < n; ++i) {
      detail::require_probe_input(batch[static_cast<std::size_t>(i)]);
      if (batch[static_cast<std::size_t>(i)].width != res) throw ShapeError("probe batch images differ in size");
      detail::pixels_into(batch[static_cast<std::size_t>(i)], x, i);
    }
    Graph<float> g(false);
    const auto& y = probe.net(g, g.constant(std::move(x)))->value;
    const std::size_t hw = y.plane();
    for (int i = 0; i < n; ++i) {
      ProbeOutput o{ClassMap(res, res), DepthMap(res, res)};
      const float* s = y.sample(i);
      for (std::size_t p = 0; p < hw; ++p) {
        int best = 0;
        for (int c = 1; c < k; ++c) {
          if (s[static_cast<std::size_t>(c) * hw + p] > s[static_cast<std::size_t>(best) * hw + p]) best = c;
        }
        o.semantics.values[p] = static_cast<std::uint8_t>(best);
        o.depth.values[p] = detail::depth_from_log(s[static_cast<std::size_t>(k) * hw + p]);
      }
      out.push_back(std::move(o));
    }
  }
  return out;
}

inline ClassMap predict_semantics(Probe& probe, const Image& image) {
  return std::move(run_probe(probe, std::span<const Image>(&image, 1)).front().semantics);
}

inline DepthMap estimate_depth_probe(Probe& probe, const Image& image) {
  return std::move(run_probe(probe, std::span<const Image>(&image, 1)).front().depth);
}

/// Mean per-image mIoU and SI depth of the probe against ground truth.
inline ProbeQuality measure_probe(Probe& probe, std::span<const scenes::SceneSample> samples) {
  if (samples.empty()) throw ParameterError("probe validation set is empty");
  std::vector<Image> images;
  for (const auto& s : samples) images.push_back(s.image);
  const auto outputs = run_probe(probe, images);
  ProbeQuality q;
  q.n_samples = static_cast<int>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    q.miou += mean_iou(outputs[i].semantics, samples[i].semantic_map, scenes::kNumClasses).miou;
    q.si_depth += si_depth_error(outputs[i].depth, samples[i].depth_map);
  }
  q.miou /= static_cast<double>(samples.size());
  q.si_depth /= static_cast<double>(samples.size());
  return q;
}

/// Trains the segmentation/depth probe on labeled scenes with noise and flip
/// augmentation and a cosine learning-rate decay, then scores it on the
/// validation scenes.
inline Probe train_probe_segmenter(std::span<const scenes::SceneSample> train_set,
                                   std::span<const scenes::SceneSample> validation_set, const ProbeConfig& config) {
  config.validate();
  if (train_set.empty()) throw ParameterError("probe training set is empty");
  const int res = train_set.front().image.width;
  for (const auto& s : train_set) {
    detail::require_probe_input(s.image);
    if (s.image.width != res) throw ShapeError("probe training images differ in size");
  }
  Rng rng(derive_seed({config.seed, 0x9b0be5ULL}));
  Probe probe{config, ProbeNet<float>(config, rng), {}, {}};
  nn::Adam<float> optimizer(probe.net.params(), nn::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8, 1.0});

  const int n = static_cast<int>(train_set.size());
  const int batch = std::min(config.batch_size, n);
  const std::size_t hw = static_cast<std::size_t>(res) * res;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int step = 0; step < config.steps; ++step) {
    optimizer.set_learning_rate(config.learning_rate * 0.5 * (1 + std::cos(std::numbers::pi * step / config.steps)));
    Tensor<float> x(batch, 3, res, res), log_depth(batch, 1, res, res);
    std::vector<int> labels(static_cast<std::size_t>(batch) * hw);
    for (int i = 0; i < batch; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& s = train_set[static_cast<std::size_t>(order[cursor++])];
      const bool flip = unit(rng) < 0.5;
      const float sigma = static_cast<float>(unit(rng) * config.max_noise);
      for (int y = 0; y < res; ++y) {
        for (int xx = 0; xx < res; ++xx) {
          const int sx = flip ? res - 1 - xx : xx;
          const std::size_t dst = static_cast<std::size_t>(y) * res + xx;
          const auto* px = s.image.pixel(y, sx);
          for (int c = 0; c < 3; ++c) x.sample(i)[static_cast<std::size_t>(c) * hw + dst] = px[c] / 127.5f - 1.0f;
          labels[static_cast<std::size_t>(i) * hw + dst] = s.semantic_map.at(y, sx);
          log_depth.sample(i)[dst] = std::log(s.depth_map.at(y, sx));
        }
      }
      for (std::size_t k = 0; k < 3 * hw; ++k) x.sample(i)[k] += sigma * normal(rng);
    }
    optimizer.zero_grad();
    Graph<float> g;
    auto out = probe.net(g, g.constant(std::move(x)));
    auto seg = nn::cross_entropy(g, nn::slice_channels(g, out, 0, scenes::kNumClasses), labels);
    auto depth = nn::mse(g, nn::slice_channels(g, out, scenes::kNumClasses, 1), log_depth);
    auto loss = nn::weighted_sum(g, seg, 1.0f, depth, static_cast<float>(config.depth_weight));
    g.backward(loss);
    optimizer.step();
    probe.loss_curve.push_back(loss->value.data[0]);
  }
  if (!validation_set.empty()) probe.quality = measure_probe(probe, validation_set);
  return probe;
}

/// Throws when the probe is too weak to score generated images.
inline void require_probe_quality(const Probe& probe) {
  if (!probe.meets_gate()) {
    throw ProbeQualityError("probe below quality gate: mIoU " + std::to_string(probe.quality.miou) + " (need >= " +
                            std::to_string(probe.config.min_miou) + "), SI depth " +
                            std::to_string(probe.quality.si_depth) + " (need < " +
                            std::to_string(probe.config.max_si_depth) + ")");
  }
}

inline void save_probe(Probe& probe, const std::filesystem::path& path) { nn::save_params(probe.net.params(), path); }

inline Probe load_probe(const std::filesystem::path& path, const ProbeConfig& config) {
  Rng rng(derive_seed({config.seed, 0x9b0be5ULL}));
  Probe probe{config, ProbeNet<float>(config, rng), {}, {}};
  nn::load_params(probe.net.params(), path);
  return probe;
}

}  // namespace nls::eval
