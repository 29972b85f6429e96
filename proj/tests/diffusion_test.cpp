#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "nls/diffusion/checkpoint.hpp"
#include "nls/diffusion/sample.hpp"
#include "nls/diffusion/train.hpp"
#include "nls/scenes/scene.hpp"

namespace nls::diffusion {
namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.resolution = 8;
  c.channels = {4, 8, 8};
  c.groups = 2;
  c.time_dim = 4;
  c.emb_dim = 6;
  c.caption_dim = 5;
  c.steps = 20;
  c.seed = 3;
  return c;
}

template <typename T>
Tensor<T> normal_tensor(Tensor<T> t, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  for (auto& v : t.data) v = static_cast<T>(normal(rng));
  return t;
}

template <typename T>
TrainingBatch<T> random_batch(const DenoiserConfig& c, int n, int layout_channels, std::mt19937_64& rng) {
  TrainingBatch<T> b;
  b.z0 = normal_tensor(Tensor<T>(n, 3, c.resolution, c.resolution), rng, 0.5);
  b.eps = normal_tensor(Tensor<T>(n, 3, c.resolution, c.resolution), rng);
  b.captions = normal_tensor(Tensor<T>(n, c.caption_dim), rng);
  if (layout_channels) b.layouts = normal_tensor(Tensor<T>(n, layout_channels, c.resolution, c.resolution), rng);
  std::uniform_int_distribution<int> t(1, c.steps);
  for (int i = 0; i < n; ++i) b.t.push_back(t(rng));
  return b;
}

TEST(Schedule, HandCumulativeProduct) {
  const auto s = make_schedule(2, 0.1, 0.2);
  EXPECT_DOUBLE_EQ(s.betas[0], 0.1);
  EXPECT_DOUBLE_EQ(s.betas[1], 0.2);
  EXPECT_NEAR(s.alphas_cumprod[0], 0.9, 1e-15);
  EXPECT_NEAR(s.alphas_cumprod[1], 0.72, 1e-15);
}

TEST(Schedule, ConstantAndDefault) {
  const auto flat = make_schedule(5, 0.05, 0.05);
  for (double b : flat.betas) EXPECT_DOUBLE_EQ(b, 0.05);
  const auto s = make_schedule(200, 1e-4, 0.02);
  double product = 1;
  for (int t = 1; t <= 200; ++t) {
    product *= 1 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 199.0);
    EXPECT_NEAR(s.alpha_bar(t), product, 1e-12);
  }
  for (int t = 2; t <= 200; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(make_schedule(1, 0.1, 0.2), ParameterError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.2), ParameterError);
  EXPECT_THROW(make_schedule(10, 0.3, 0.2), ParameterError);
  EXPECT_THROW(make_schedule(10, 0.1, 1.0), ParameterError);
}

TEST(ForwardNoise, DegenerateBranches) {
  const auto s = make_schedule(10, 0.01, 0.2);
  const std::vector<double> z0{1.0, -2.0, 0.5}, zero(3, 0.0), eps{0.3, 0.1, -1.0};
  const auto a = forward_noise(z0, 4, zero, s);
  const auto b = forward_noise(zero, 4, eps, s);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(a[i], std::sqrt(s.alpha_bar(4)) * z0[i]);
    EXPECT_DOUBLE_EQ(b[i], std::sqrt(1 - s.alpha_bar(4)) * eps[i]);
  }
  EXPECT_THROW(forward_noise(z0, 0, eps, s), ParameterError);
  EXPECT_THROW(forward_noise(z0, 11, eps, s), ParameterError);
}

TEST(ForwardNoise, MonteCarloMoments) {
  const auto s = make_schedule(200, 1e-4, 0.02);
  const int t = 120, draws = 100000;
  const double z0 = 0.7;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::vector<double> z(static_cast<std::size_t>(draws), z0), eps(static_cast<std::size_t>(draws));
  for (auto& e : eps) e = normal(rng);
  const auto zt = forward_noise(z, t, eps, s);
  double mean = 0, var = 0;
  for (double v : zt) mean += v;
  mean /= draws;
  for (double v : zt) var += (v - mean) * (v - mean);
  var /= draws - 1;
  const double expected_var = 1 - s.alpha_bar(t);
  EXPECT_LT(std::abs(mean - std::sqrt(s.alpha_bar(t)) * z0), 3 * std::sqrt(expected_var / draws));
  EXPECT_LT(std::abs(var / expected_var - 1), 0.05);
}

TEST(Caption, BagOfWords) {
  const CaptionEncoder enc(16, 1);
  for (float v : enc.encode("")) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(enc.encode("red circle"), enc.encode("circle red"));
  EXPECT_EQ(enc.encode("a red circle, night"), enc.encode("night circle red A"));
  EXPECT_NE(enc.encode("red circle"), enc.encode("blue square"));
  EXPECT_EQ(enc.encode("zebra"), enc.encode("giraffe"));
  EXPECT_NE(enc.encode("zebra"), enc.encode("red"));
  EXPECT_EQ(enc.encode("red"), CaptionEncoder(16, 1).encode("red"));
  EXPECT_NE(enc.encode("red"), CaptionEncoder(16, 2).encode("red"));
}

TEST(Caption, CoversEverySceneCaption) {
  const auto vocab = scene_vocabulary();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = scenes::generate_scene(seed, {});
    for (const auto& w : tokenize(scenes::caption_scene(spec, scenes::StyleTag::kFoggy))) {
      EXPECT_NE(std::find(vocab.begin(), vocab.end(), w), vocab.end()) << w;
    }
  }
}

TEST(Codec, IdentityAndPooling) {
  std::mt19937_64 rng(2);
  const auto x = normal_tensor(Tensor<float>(2, 3, 8, 8), rng);
  EXPECT_EQ(LatentCodec::identity().decode(LatentCodec::identity().encode(x)), x);
  const auto pool = LatentCodec::avg_pool(2);
  const auto z = pool.encode(x);
  EXPECT_EQ(z.h(), 4);
  const auto blocky = pool.decode(z);
  EXPECT_EQ(pool.decode(pool.encode(blocky)), blocky);
  EXPECT_EQ(parse_codec("avgpool-4").factor, 4);
  EXPECT_THROW(parse_codec("vae"), ConfigurationError);
}

TEST(Denoiser, OutputShapeAndResolutionCheck) {
  auto cfg = tiny_config();
  Denoiser<float> base(cfg);
  std::mt19937_64 rng(4);
  const auto b = random_batch<float>(cfg, 3, 0, rng);
  const auto out = denoise_predict(base, static_cast<Adapter<float>*>(nullptr), b.z0, b.t, b.captions, static_cast<const Tensor<float>*>(nullptr));
  EXPECT_EQ(out.shape, b.z0.shape);
  const auto wrong = normal_tensor(Tensor<float>(3, 3, 16, 16), rng);
  EXPECT_THROW(denoise_predict(base, static_cast<Adapter<float>*>(nullptr), wrong, b.t, b.captions, static_cast<const Tensor<float>*>(nullptr)), ShapeError);
  Adapter<float> adapter(base, 2, 1);
  const auto bad_layout = normal_tensor(Tensor<float>(3, 2, 4, 4), rng);
  EXPECT_THROW(denoise_predict(base, &adapter, b.z0, b.t, b.captions, &bad_layout), ShapeError);
}

TEST(Adapter, ZeroInitIsExactIdentity) {
  auto cfg = tiny_config();
  Denoiser<float> base(cfg);
  // Move the base away from its zero-initialized output layer.
  std::mt19937_64 rng(5);
  for (auto* p : base.params()) p->value = normal_tensor(p->value, rng, 0.3);
  Adapter<float> adapter(base, 3, 9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = random_batch<float>(cfg, 4, 3, rng);
    const auto plain = denoise_predict(base, static_cast<Adapter<float>*>(nullptr), b.z0, b.t, b.captions, static_cast<const Tensor<float>*>(nullptr));
    const auto conditioned = denoise_predict(base, &adapter, b.z0, b.t, b.captions, &b.layouts);
    EXPECT_EQ(plain, conditioned);
  }
}

TEST(Adapter, CopiesTheBaseEncoder) {
  Denoiser<float> base(tiny_config());
  Adapter<float> adapter(base, 2, 1);
  EXPECT_EQ(adapter.conv_in.weight.value, base.conv_in.weight.value);
  EXPECT_EQ(adapter.res3.conv2.weight.value, base.res3.conv2.weight.value);
  adapter.visit_couplings([](nn::Param<float>& p) {
    for (float v : p.value.data) EXPECT_EQ(v, 0.0f);
  });
}

TEST(TrainingLoss, PerfectAndZeroPredictors) {
  std::mt19937_64 rng(6);
  const auto eps = normal_tensor(Tensor<double>(64, 3, 16, 16), rng);
  nn::Graph<double> g(false);
  EXPECT_EQ(nn::mse(g, g.constant(eps), eps)->value.data[0], 0.0);
  const double zero_loss = nn::mse(g, g.constant(Tensor<double>(64, 3, 16, 16)), eps)->value.data[0];
  EXPECT_NEAR(zero_loss, 1.0, 0.05);
}

TEST(TrainingLoss, MatchesFiniteDifferences) {
  auto cfg = tiny_config();
  Denoiser<double> base(cfg);
  Adapter<double> adapter(base, 2, 4);
  std::mt19937_64 rng(7);
  for (auto* p : base.params()) p->value = normal_tensor(p->value, rng, 0.3);
  for (auto* p : adapter.params()) p->value = normal_tensor(p->value, rng, 0.3);
  const auto schedule = make_schedule(cfg.steps, 1e-3, 0.2);
  const auto batch = random_batch<double>(cfg, 2, 2, rng);

  auto all = base.params();
  for (auto* p : adapter.params()) all.push_back(p);
  for (auto* p : all) p->zero_grad();
  {
    nn::Graph<double> g;
    g.backward(training_loss(g, batch, schedule, base, &adapter));
  }
  auto loss_at = [&] {
    nn::Graph<double> g(false);
    return training_loss(g, batch, schedule, base, &adapter)->value.data[0];
  };
  std::uniform_int_distribution<std::size_t> pick_param(0, all.size() - 1);
  const double h = 1e-4;
  for (int probe = 0; probe < 20; ++probe) {
    auto* p = all[pick_param(rng)];
    const auto i = std::uniform_int_distribution<std::size_t>(0, p->value.size() - 1)(rng);
    const double saved = p->value.data[i];
    p->value.data[i] = saved + h;
    const double up = loss_at();
    p->value.data[i] = saved - h;
    const double down = loss_at();
    p->value.data[i] = saved;
    const double numeric = (up - down) / (2 * h), analytic = p->grad.data[i];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    EXPECT_LT(rel, 1e-4) << p->name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
  }
}

class SceneTraining : public ::testing::Test {
 protected:
  static DiffusionData scene_data(int count, int layout_channels) {
    std::vector<Image> images;
    std::vector<std::string> captions;
    std::vector<layout::NeuralLayout> layouts;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int i = 0; i < count; ++i) {
      const auto sample = scenes::render_scene(scenes::generate_scene(static_cast<std::uint64_t>(i), {}), 16,
                                               scenes::StyleTag::kPlain);
      images.push_back(sample.image);
      captions.push_back(sample.caption);
      layout::NeuralLayout l;
      l.height_px = l.width_px = 16;
      l.n_components = layout_channels;
      l.values.resize(16 * 16 * static_cast<std::size_t>(layout_channels));
      for (auto& v : l.values) v = u(rng);
      layouts.push_back(l);
    }
    return make_diffusion_data(images, captions, layouts, CaptionEncoder(8, 1), LatentCodec::identity());
  }

  static DenoiserConfig config() {
    DenoiserConfig c;
    c.resolution = 16;
    c.channels = {8, 16, 16};
    c.groups = 4;
    c.time_dim = 8;
    c.emb_dim = 16;
    c.caption_dim = 8;
    c.steps = 50;
    c.seed = 2;
    return c;
  }

  NoiseSchedule schedule = make_schedule(50, 1e-3, 0.1);
  DiffusionData data = scene_data(64, 3);
};

TEST_F(SceneTraining, LossDecreasesAndIsReproducible) {
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;
  Denoiser<float> a(config()), b(config());
  const auto ra = train(a, nullptr, data, schedule, tc);
  const auto rb = train(b, nullptr, data, schedule, tc);
  ASSERT_EQ(ra.curve.size(), 8u);
  EXPECT_EQ(ra.curve, rb.curve);
  EXPECT_LT(ra.curve.back().loss, ra.curve.front().loss);
  EXPECT_EQ(rng_state(ra.rng), rng_state(rb.rng));
}

TEST_F(SceneTraining, AdapterTrainingLeavesFrozenBaseUntouched) {
  Denoiser<float> base(config());
  TrainConfig tc;
  tc.epochs = 1;
  train(base, nullptr, data, schedule, tc);
  std::vector<nn::Tensor<float>> before;
  for (auto* p : base.params()) before.push_back(p->value);

  Adapter<float> adapter(base, 3, 1);
  tc.mode = TrainMode::kAdapter;
  tc.epochs = 1;
  train(base, &adapter, data, schedule, tc);
  const auto after = base.params();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_EQ(after[i]->value, before[i]) << after[i]->name;
    EXPECT_FALSE(after[i]->frozen);
  }
  bool moved = false;
  adapter.visit_couplings([&](nn::Param<float>& p) {
    for (float v : p.value.data) moved = moved || v != 0.0f;
  });
  EXPECT_TRUE(moved);

  std::vector<int> t(4, 25);
  Tensor<float> z0(4, 3, 16, 16), caps(4, 8), lays(4, 3, 16, 16);
  std::copy_n(data.latents.data.begin(), z0.size(), z0.data.begin());
  std::copy_n(data.layouts.data.begin(), lays.size(), lays.data.begin());
  EXPECT_NE(denoise_predict(base, &adapter, z0, t, caps, &lays),
            denoise_predict(base, static_cast<Adapter<float>*>(nullptr), z0, t, caps, static_cast<const Tensor<float>*>(nullptr)));
}

TEST_F(SceneTraining, ModeRequirements) {
  Denoiser<float> base(config());
  TrainConfig tc;
  tc.mode = TrainMode::kAdapter;
  EXPECT_THROW(train(base, nullptr, data, schedule, tc), ConfigurationError);
  tc.mode = TrainMode::kBase;
  EXPECT_THROW(train(base, nullptr, data, make_schedule(20, 1e-3, 0.1), tc), ConsistencyError);
  EXPECT_THROW(make_diffusion_data(std::span<const Image>{}, {}, {}, CaptionEncoder(8, 1), LatentCodec::identity()),
               ParameterError);
}

TEST_F(SceneTraining, SamplingIsDeterministicAndChunkInvariant) {
  Denoiser<float> base(config());
  TrainConfig tc;
  tc.epochs = 1;
  train(base, nullptr, data, schedule, tc);
  const CaptionEncoder enc(8, 1);
  const auto caption = enc.encode("a red circle on a gradient background");
  const auto codec = LatentCodec::identity();
  const auto a = sample(base, nullptr, caption, nullptr, schedule, codec, 17, 3);
  const auto b = sample(base, nullptr, caption, nullptr, schedule, codec, 17, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a[0], a[1]);
  EXPECT_EQ(a[0].width, 16);

  std::vector<SampleRequest> requests;
  for (std::uint64_t i = 0; i < 3; ++i) requests.push_back({caption, nullptr, 17, i});
  EXPECT_EQ(sample_images(base, nullptr, schedule, codec, requests, 1), a);
  EXPECT_NE(sample(base, nullptr, caption, nullptr, schedule, codec, 18, 1)[0], a[0]);
}

TEST_F(SceneTraining, CheckpointRoundTrip) {
  Denoiser<float> base(config());
  Adapter<float> adapter(base, 3, 4);
  TrainConfig tc;
  tc.mode = TrainMode::kJoint;
  tc.epochs = 1;
  const auto result = train(base, &adapter, data, schedule, tc);
  CheckpointMeta meta;
  meta.denoiser = config();
  meta.schedule = {50, 1e-3, 0.1};
  meta.caption_dim = 8;
  meta.layout_channels = 3;
  meta.adapter_seed = 4;
  meta.loss_curve = result.curve;
  meta.rng_state = rng_state(result.rng);
  const auto dir = std::filesystem::temp_directory_path() / "nls_checkpoint_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, meta, base, &adapter);
  auto loaded = load_checkpoint(dir);
  ASSERT_TRUE(loaded.adapter);
  const auto pa = base.params(), pb = loaded.base->params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  const auto qa = adapter.params(), qb = loaded.adapter->params();
  for (std::size_t i = 0; i < qa.size(); ++i) EXPECT_EQ(qa[i]->value, qb[i]->value);
  EXPECT_EQ(io::read_file(dir / "loss.csv").substr(0, 10), "step,loss\n");
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), ResolutionError);
}

}  // namespace
}  // namespace nls::diffusion
