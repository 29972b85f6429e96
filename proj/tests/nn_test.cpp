#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <random>

#include "nls/nn/adam.hpp"
#include "nls/nn/param_io.hpp"

namespace nls::nn {
namespace {

using Loss = std::function<Var<double>(Graph<double>&)>;

Param<double> random_param(const std::string& name, Tensor<double> shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Param<double> p{name, std::move(shape), {}, false};
  for (auto& v : p.value.data) v = normal(rng);
  return p;
}

Tensor<double> random_tensor(Tensor<double> t, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  for (auto& v : t.data) v = normal(rng);
  return t;
}

// Every coordinate of every parameter against central differences.
void expect_gradients_match(const std::vector<Param<double>*>& params, const Loss& loss, double tol = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  const double h = 1e-5;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      Graph<double> gp(false);
      const double up = loss(gp)->value.data[0];
      p->value.data[i] = saved - h;
      Graph<double> gm(false);
      const double down = loss(gm)->value.data[0];
      p->value.data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data[i];
      EXPECT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric))) << p->name << "[" << i << "]";
    }
  }
}

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  for (int k : {1, 3}) {
    auto x = random_param("x", Tensor<double>(2, 3, 5, 4), rng);
    auto w = random_param("w", Tensor<double>(4, 3, k, k), rng);
    auto b = random_param("b", Tensor<double>(4, 1), rng);
    Graph<double> g(false);
    const auto& out = conv2d(g, g.param(x), g.param(w), g.param(b))->value;
    const int pad = k / 2;
    for (int n = 0; n < 2; ++n) {
      for (int co = 0; co < 4; ++co) {
        for (int y = 0; y < 5; ++y) {
          for (int xx = 0; xx < 4; ++xx) {
            double s = b.value.data[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < 3; ++ci) {
              for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                  const int sy = y + dy - pad, sx = xx + dx - pad;
                  if (sy >= 0 && sy < 5 && sx >= 0 && sx < 4) s += w.value.at(co, ci, dy, dx) * x.value.at(n, ci, sy, sx);
                }
              }
            }
            EXPECT_NEAR(out.at(n, co, y, xx), s, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Gradients, Conv2d) {
  std::mt19937_64 rng(2);
  for (int k : {1, 3}) {
    auto x = random_param("x", Tensor<double>(2, 2, 4, 5), rng);
    auto w = random_param("w", Tensor<double>(3, 2, k, k), rng);
    auto b = random_param("b", Tensor<double>(3, 1), rng);
    const auto target = random_tensor(Tensor<double>(2, 3, 4, 5), rng);
    expect_gradients_match({&x, &w, &b}, [&](Graph<double>& g) {
      return mse(g, conv2d(g, g.param(x), g.param(w), g.param(b)), target);
    });
  }
}

TEST(Gradients, GroupNormSiluAndBias) {
  std::mt19937_64 rng(3);
  auto x = random_param("x", Tensor<double>(2, 4, 3, 3), rng);
  auto gamma = random_param("gamma", Tensor<double>(4, 1), rng);
  auto beta = random_param("beta", Tensor<double>(4, 1), rng);
  auto bias = random_param("bias", Tensor<double>(2, 4), rng);
  const auto target = random_tensor(Tensor<double>(2, 4, 3, 3), rng);
  expect_gradients_match({&x, &gamma, &beta, &bias}, [&](Graph<double>& g) {
    auto h = group_norm(g, g.param(x), g.param(gamma), g.param(beta), 2);
    return mse(g, add_channel_bias(g, silu(g, h), g.param(bias)), target);
  });
}

TEST(Gradients, PoolUpsampleConcatSlice) {
  std::mt19937_64 rng(4);
  auto a = random_param("a", Tensor<double>(2, 2, 4, 4), rng);
  auto b = random_param("b", Tensor<double>(2, 3, 4, 4), rng);
  const auto target = random_tensor(Tensor<double>(2, 3, 4, 4), rng);
  expect_gradients_match({&a, &b}, [&](Graph<double>& g) {
    auto pooled = upsample2(g, avg_pool2(g, g.param(a)));
    auto joined = concat_channels(g, pooled, g.param(b));
    auto mixed = weighted_sum(g, slice_channels(g, joined, 1, 3), 0.5, slice_channels(g, joined, 0, 3), -2.0);
    return mse(g, mixed, target);
  });
}

TEST(Gradients, LinearAndCrossEntropy) {
  std::mt19937_64 rng(5);
  auto x = random_param("x", Tensor<double>(3, 4), rng);
  auto w = random_param("w", Tensor<double>(5, 4), rng);
  auto b = random_param("b", Tensor<double>(5, 1), rng);
  const auto target = random_tensor(Tensor<double>(3, 5), rng);
  expect_gradients_match({&x, &w, &b}, [&](Graph<double>& g) {
    return mse(g, linear(g, g.param(x), g.param(w), g.param(b)), target);
  });

  auto logits = random_param("logits", Tensor<double>(2, 4, 2, 3), rng);
  std::vector<int> labels(12);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  expect_gradients_match({&logits}, [&](Graph<double>& g) { return cross_entropy(g, g.param(logits), labels); });
}

TEST(Gradients, ResBlockWithEmbedding) {
  std::mt19937_64 rng(6);
  Rng init(7);
  ResBlock<double> block("blk", 2, 4, 3, 2, init);
  auto x = random_param("x", Tensor<double>(2, 2, 4, 4), rng);
  auto emb = random_param("emb", Tensor<double>(2, 3), rng);
  const auto target = random_tensor(Tensor<double>(2, 4, 4, 4), rng);
  auto params = collect<double>(block);
  params.push_back(&x);
  params.push_back(&emb);
  expect_gradients_match(params, [&](Graph<double>& g) {
    return mse(g, block(g, g.param(x), g.param(emb)), target);
  });
}

TEST(Graph, FrozenParametersReceiveNoGradient) {
  std::mt19937_64 rng(8);
  auto x = random_param("x", Tensor<double>(1, 3), rng);
  auto w = random_param("w", Tensor<double>(2, 3), rng);
  w.frozen = true;
  Graph<double> g;
  g.backward(mse(g, linear(g, g.param(x), g.param(w), Var<double>{}), Tensor<double>(1, 2)));
  EXPECT_EQ(w.grad.size(), 0u);
  EXPECT_EQ(x.grad.size(), 3u);
}

TEST(Graph, NonRecordingGraphRefusesBackward) {
  Param<double> x{"x", Tensor<double>(1, 1, 1, 1, 2.0), {}, false};
  Graph<double> g(false);
  EXPECT_THROW(g.backward(mse(g, g.param(x), Tensor<double>(1, 1))), ConfigurationError);
}

TEST(Adam, MinimizesAQuadraticAndSkipsFrozen) {
  Param<float> x{"x", Tensor<float>(1, 4, 1, 1, 3.0f), {}, false};
  Param<float> fixed{"fixed", Tensor<float>(1, 4, 1, 1, 5.0f), {}, true};
  Adam<float> opt({&x, &fixed}, AdamConfig{0.05, 0.9, 0.999, 1e-8, 0});
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    Graph<float> g;
    g.backward(mse(g, add(g, g.param(x), g.param(fixed)), Tensor<float>(1, 4, 1, 1, 1.0f)));
    opt.step();
  }
  for (float v : x.value.data) EXPECT_NEAR(v, -4.0f, 1e-2f);
  for (float v : fixed.value.data) EXPECT_EQ(v, 5.0f);
}

TEST(ParamIo, RoundTripAndValidation) {
  Rng rng(9);
  ResBlock<float> a("blk", 4, 8, 6, 4, rng), b("blk", 4, 8, 6, 4, rng);
  const auto pa = collect<float>(a), pb = collect<float>(b);
  EXPECT_NE(pa[2]->value, pb[2]->value);
  const auto path = std::filesystem::temp_directory_path() / "nls_params_test.nlck";
  save_params(pa, path);
  load_params(pb, path);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  std::filesystem::remove(path);

  ResBlock<float> other("blk", 4, 4, 6, 4, rng);
  const auto bytes = encode_params(pa);
  EXPECT_THROW(assign_params(collect<float>(other), decode_params(bytes, "blob"), "blob"), ConsistencyError);
  EXPECT_THROW(decode_params(bytes.substr(0, bytes.size() - 2), "blob"), FormatError);
  EXPECT_EQ(parameter_count(pa), parameter_count(pb));
}

}  // namespace
}  // namespace nls::nn
