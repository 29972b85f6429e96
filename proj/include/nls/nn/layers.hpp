#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "nls/core/random.hpp"
#include "nls/nn/ops.hpp"

namespace nls::nn {

/// Every module exposes visit(f) over its parameters in a fixed order.
template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T, typename M>
ParamList<T> collect(M& module) {
  ParamList<T> out;
  module.visit([&](Param<T>& p) { out.push_back(&p); });
  return out;
}

namespace detail {

// Drawn in double so float and double models built from one seed agree.
template <typename T>
Param<T> uniform_param(std::string name, Tensor<T> shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Param<T> p{std::move(name), std::move(shape), {}, false};
  for (auto& v : p.value.data) v = static_cast<T>(u(rng));
  return p;
}

template <typename T>
Param<T> filled_param(std::string name, Tensor<T> shape, T value) {
  Param<T> p{std::move(name), std::move(shape), {}, false};
  std::fill(p.value.data.begin(), p.value.data.end(), value);
  return p;
}

}  // namespace detail

template <typename T>
struct Conv2d {
  Param<T> weight;
  Param<T> bias;

  Conv2d() = default;
  // zero = true gives an exactly-zero layer (adapter couplings, output heads).
  Conv2d(const std::string& name, int in, int out, int kernel, Rng& rng, bool zero = false) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight = detail::uniform_param<T>(name + ".weight", Tensor<T>(out, in, kernel, kernel), zero ? 0.0 : bound, rng);
    bias = detail::uniform_param<T>(name + ".bias", Tensor<T>(out, 1), zero ? 0.0 : bound, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) { return conv2d(g, x, g.param(weight), g.param(bias)); }

  template <typename F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename T>
struct GroupNorm {
  Param<T> gamma;
  Param<T> beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups_)
      : gamma(detail::filled_param<T>(name + ".gamma", Tensor<T>(channels, 1), T(1))),
        beta(detail::filled_param<T>(name + ".beta", Tensor<T>(channels, 1), T(0))),
        groups(groups_) {
    if (channels % groups != 0) throw ConfigurationError(name + ": " + std::to_string(channels) +
                                                         " channels are not divisible into " + std::to_string(groups) + " groups");
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) { return group_norm(g, x, g.param(gamma), g.param(beta), groups); }

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename T>
struct Linear {
  Param<T> weight;
  Param<T> bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = detail::uniform_param<T>(name + ".weight", Tensor<T>(out, in), bound, rng);
    bias = detail::uniform_param<T>(name + ".bias", Tensor<T>(out, 1), bound, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) { return linear(g, x, g.param(weight), g.param(bias)); }

  template <typename F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

/// GN-SiLU-conv, add embedding bias, GN-SiLU-conv, plus a (1x1 when the
/// width changes) skip path. emb_dim = 0 drops the embedding input.
template <typename T>
struct ResBlock {
  GroupNorm<T> norm1;
  Conv2d<T> conv1;
  Linear<T> emb_proj;
  GroupNorm<T> norm2;
  Conv2d<T> conv2;
  Conv2d<T> skip;
  bool has_emb = false;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(const std::string& name, int in, int out, int emb_dim, int groups, Rng& rng)
      : norm1(name + ".norm1", in, std::min(groups, in)),
        conv1(name + ".conv1", in, out, 3, rng),
        norm2(name + ".norm2", out, std::min(groups, out)),
        conv2(name + ".conv2", out, out, 3, rng),
        has_emb(emb_dim > 0),
        has_skip(in != out) {
    if (has_emb) emb_proj = Linear<T>(name + ".emb", emb_dim, out, rng);
    if (has_skip) skip = Conv2d<T>(name + ".skip", in, out, 1, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x, Var<T> emb) {
    auto h = conv1(g, silu(g, norm1(g, x)));
    if (has_emb) h = add_channel_bias(g, h, emb_proj(g, emb));
    h = conv2(g, silu(g, norm2(g, h)));
    return add(g, has_skip ? skip(g, x) : x, h);
  }

  template <typename F>
  void visit(F&& f) {
    norm1.visit(f);
    conv1.visit(f);
    if (has_emb) emb_proj.visit(f);
    norm2.visit(f);
    conv2.visit(f);
    if (has_skip) skip.visit(f);
  }
};

template <typename T>
void copy_values(const ParamList<T>& from, const ParamList<T>& to) {
  if (from.size() != to.size()) throw ConsistencyError("parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]->value.same_shape(to[i]->value)) throw ConsistencyError("shape mismatch copying " + from[i]->name);
    to[i]->value = from[i]->value;
  }
}

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

}  // namespace nls::nn
