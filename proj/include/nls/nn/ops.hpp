#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "nls/nn/graph.hpp"

namespace nls::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
bool needs(Var<T> v) {
  return v && v->requires_grad;
}

// Column layout: row r = (ci k + dy) k + dx, column j = n HW + y W + x.
template <typename T>
void im2col(const Tensor<T>& x, int k, Buffer<T>& cols) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w(), pad = k / 2;
  const std::size_t hw = x.plane(), cols_per_row = static_cast<std::size_t>(n) * hw;
  cols.assign(static_cast<std::size_t>(c) * k * k * cols_per_row, T{});
  for (int ci = 0; ci < c; ++ci) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        T* row = cols.data() + ((static_cast<std::size_t>(ci) * k + dy) * k + dx) * cols_per_row;
        const int x_lo = std::max(0, pad - dx), x_hi = std::min(w, w + pad - dx);
        for (int i = 0; i < n; ++i) {
          const T* src = x.sample(i) + static_cast<std::size_t>(ci) * hw;
          T* dst = row + static_cast<std::size_t>(i) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy - pad;
            if (sy < 0 || sy >= h) continue;
            const T* s = src + static_cast<std::size_t>(sy) * w;
            T* d = dst + static_cast<std::size_t>(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] = s[xx + dx - pad];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int k, Tensor<T>& dx) {
  const int n = dx.n(), c = dx.c(), h = dx.h(), w = dx.w(), pad = k / 2;
  const std::size_t hw = dx.plane(), cols_per_row = static_cast<std::size_t>(n) * hw;
  for (int ci = 0; ci < c; ++ci) {
    for (int dy = 0; dy < k; ++dy) {
      for (int ddx = 0; ddx < k; ++ddx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * k + dy) * k + ddx) * cols_per_row;
        const int x_lo = std::max(0, pad - ddx), x_hi = std::min(w, w + pad - ddx);
        for (int i = 0; i < n; ++i) {
          T* dst = dx.sample(i) + static_cast<std::size_t>(ci) * hw;
          const T* src = row + static_cast<std::size_t>(i) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy - pad;
            if (sy < 0 || sy >= h) continue;
            T* d = dst + static_cast<std::size_t>(sy) * w;
            const T* s = src + static_cast<std::size_t>(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx + ddx - pad] += s[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace detail

/// Stride-1 convolution with "same" zero padding; w is (C_out, C_in, k, k), b is (C_out).
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  using namespace detail;
  const int k = w->value.h();
  if (w->value.w() != k || k % 2 == 0) throw ShapeError("conv2d needs an odd square kernel");
  if (x->value.c() != w->value.c()) {
    throw ShapeError("conv2d input has " + std::to_string(x->value.c()) + " channels, kernel expects " +
                     std::to_string(w->value.c()));
  }
  const int n = x->value.n(), cout = w->value.n(), h = x->value.h(), wd = x->value.w();
  const std::size_t hw = x->value.plane();
  const Eigen::Index kk = static_cast<Eigen::Index>(w->value.c()) * k * k;
  const Eigen::Index p = static_cast<Eigen::Index>(n) * static_cast<Eigen::Index>(hw);

  auto cols = std::make_shared<Buffer<T>>();
  im2col(x->value, k, *cols);
  RowMat<T> out_m(cout, p);
  out_m.noalias() = ConstMapMat<T>(w->value.data.data(), cout, kk) * ConstMapMat<T>(cols->data(), kk, p);

  Tensor<T> out(n, cout, h, wd);
  for (int i = 0; i < n; ++i) {
    for (int co = 0; co < cout; ++co) {
      const T bias = b ? b->value.data[static_cast<std::size_t>(co)] : T{};
      const T* src = out_m.data() + static_cast<std::size_t>(co) * p + static_cast<std::size_t>(i) * hw;
      T* dst = out.sample(i) + static_cast<std::size_t>(co) * hw;
      for (std::size_t j = 0; j < hw; ++j) dst[j] = src[j] + bias;
    }
  }
  auto* y = g.make(std::move(out), needs(x) || needs(w) || needs(b));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    RowMat<T> dy_m(cout, p);
    for (int i = 0; i < n; ++i) {
      for (int co = 0; co < cout; ++co) {
        const T* src = y->grad.sample(i) + static_cast<std::size_t>(co) * hw;
        std::copy(src, src + hw, dy_m.data() + static_cast<std::size_t>(co) * p + static_cast<std::size_t>(i) * hw);
      }
    }
    if (needs(w)) {
      MapMat<T>(w->grad_buffer().data.data(), cout, kk).noalias() +=
          dy_m * ConstMapMat<T>(cols->data(), kk, p).transpose();
    }
    if (needs(b)) {
      auto& db = b->grad_buffer();
      for (int co = 0; co < cout; ++co) db.data[static_cast<std::size_t>(co)] += dy_m.row(co).sum();
    }
    if (needs(x)) {
      RowMat<T> dcols(kk, p);
      dcols.noalias() = ConstMapMat<T>(w->value.data.data(), cout, kk).transpose() * dy_m;
      col2im_add(dcols.data(), k, x->grad_buffer());
    }
  };
  return y;
}

/// Group normalization with per-channel affine (gamma, beta of shape (C)).
template <typename T>
Var<T> group_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps = T(1e-5)) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Arr>;
  using MMap = Eigen::Map<Arr>;
  const auto& xv = x->value;
  const int n = xv.n(), c = xv.c();
  if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  const int cg = c / groups;
  const auto hw = static_cast<Eigen::Index>(xv.plane());
  const Eigen::Index count = cg * hw;
  auto xhat = std::make_shared<Tensor<T>>(xv.n(), xv.c(), xv.h(), xv.w());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
  Tensor<T> out(xv.n(), xv.c(), xv.h(), xv.w());
  for (int i = 0; i < n; ++i) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(gi) * cg) * static_cast<std::size_t>(hw);
      CMap xs(xv.data.data() + off, count);
      const T mean = xs.mean();
      MMap xh(xhat->data.data() + off, count);
      xh = xs - mean;
      const T is = T(1) / std::sqrt(xh.square().mean() + eps);
      xh *= is;
      (*inv_std)[static_cast<std::size_t>(i) * groups + gi] = is;
      for (int cc = 0; cc < cg; ++cc) {
        const auto ch = static_cast<std::size_t>(gi * cg + cc);
        MMap(out.data.data() + off + cc * hw, hw) = xh.segment(cc * hw, hw) * gamma->value.data[ch] + beta->value.data[ch];
      }
    }
  }
  auto* y = g.make(std::move(out), detail::needs(x) || detail::needs(gamma) || detail::needs(beta));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    const auto& dy = y->grad;
    Arr dxh(count);
    for (int i = 0; i < n; ++i) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(gi) * cg) * static_cast<std::size_t>(hw);
        CMap d(dy.data.data() + off, count), xh(xhat->data.data() + off, count);
        for (int cc = 0; cc < cg; ++cc) {
          const auto ch = static_cast<std::size_t>(gi * cg + cc);
          const auto seg = d.segment(cc * hw, hw);
          if (detail::needs(gamma)) gamma->grad_buffer().data[ch] += (seg * xh.segment(cc * hw, hw)).sum();
          if (detail::needs(beta)) beta->grad_buffer().data[ch] += seg.sum();
          dxh.segment(cc * hw, hw) = seg * gamma->value.data[ch];
        }
        if (!detail::needs(x)) continue;
        const T mean_d = dxh.mean(), mean_dx = (dxh * xh).mean();
        const T is = (*inv_std)[static_cast<std::size_t>(i) * groups + gi];
        MMap(x->grad_buffer().data.data() + off, count) += is * (dxh - mean_d - xh * mean_dx);
      }
    }
  };
  return y;
}

template <typename T>
Var<T> silu(Graph<T>& g, Var<T> x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x->value.size());
  Eigen::Map<const Arr> xv(x->value.data.data(), n);
  auto sig = std::make_shared<Arr>((T(1) + (-xv).exp()).inverse());
  Tensor<T> out;
  out.shape = x->value.shape;
  out.data.resize(x->value.size());
  Eigen::Map<Arr>(out.data.data(), n) = xv * *sig;
  auto* y = g.make(std::move(out), detail::needs(x));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    Eigen::Map<const Arr> xs(x->value.data.data(), n), dy(y->grad.data.data(), n);
    Eigen::Map<Arr>(x->grad_buffer().data.data(), n) += dy * *sig * (T(1) + xs * (T(1) - *sig));
  };
  return y;
}

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  require_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  detail::add_into(out, b->value);
  auto* y = g.make(std::move(out), detail::needs(a) || detail::needs(b));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    if (detail::needs(a)) detail::add_into(a->grad_buffer(), y->grad);
    if (detail::needs(b)) detail::add_into(b->grad_buffer(), y->grad);
  };
  return y;
}

template <typename T>
Var<T> scale(Graph<T>& g, Var<T> x, T s) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v *= s;
  auto* y = g.make(std::move(out), detail::needs(x));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    auto& dx = x->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += s * y->grad.data[i];
  };
  return y;
}

/// x (N, C, H, W) plus a per-sample, per-channel bias (N, C).
template <typename T>
Var<T> add_channel_bias(Graph<T>& g, Var<T> x, Var<T> bias) {
  const int n = x->value.n(), c = x->value.c();
  if (bias->value.n() != n || bias->value.c() != c || bias->value.plane() != 1) {
    throw ShapeError("channel bias shape " + shape_string(bias->value.shape) + " does not fit " +
                     shape_string(x->value.shape));
  }
  const std::size_t hw = x->value.plane();
  Tensor<T> out = x->value;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T v = bias->value.at(i, ch);
      T* p = out.sample(i) + static_cast<std::size_t>(ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] += v;
    }
  }
  auto* y = g.make(std::move(out), detail::needs(x) || detail::needs(bias));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    if (detail::needs(x)) detail::add_into(x->grad_buffer(), y->grad);
    if (!detail::needs(bias)) return;
    auto& db = bias->grad_buffer();
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const T* p = y->grad.sample(i) + static_cast<std::size_t>(ch) * hw;
        T s{};
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
        db.at(i, ch) += s;
      }
    }
  };
  return y;
}

template <typename T>
Var<T> avg_pool2(Graph<T>& g, Var<T> x) {
  const auto& xv = x->value;
  if (xv.h() % 2 || xv.w() % 2) throw ShapeError("avg_pool2 needs even spatial dims");
  Tensor<T> out(xv.n(), xv.c(), xv.h() / 2, xv.w() / 2);
  for (int i = 0; i < xv.n(); ++i) {
    for (int ch = 0; ch < xv.c(); ++ch) {
      for (int y = 0; y < out.h(); ++y) {
        for (int xx = 0; xx < out.w(); ++xx) {
          out.at(i, ch, y, xx) = T(0.25) * (xv.at(i, ch, 2 * y, 2 * xx) + xv.at(i, ch, 2 * y, 2 * xx + 1) +
                                            xv.at(i, ch, 2 * y + 1, 2 * xx) + xv.at(i, ch, 2 * y + 1, 2 * xx + 1));
        }
      }
    }
  }
  auto* y = g.make(std::move(out), detail::needs(x));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    auto& dx = x->grad_buffer();
    for (int i = 0; i < dx.n(); ++i) {
      for (int ch = 0; ch < dx.c(); ++ch) {
        for (int yy = 0; yy < dx.h(); ++yy) {
          for (int xx = 0; xx < dx.w(); ++xx) dx.at(i, ch, yy, xx) += T(0.25) * y->grad.at(i, ch, yy / 2, xx / 2);
        }
      }
    }
  };
  return y;
}

template <typename T>
Var<T> upsample2(Graph<T>& g, Var<T> x) {
  const auto& xv = x->value;
  Tensor<T> out(xv.n(), xv.c(), xv.h() * 2, xv.w() * 2);
  for (int i = 0; i < out.n(); ++i) {
    for (int ch = 0; ch < out.c(); ++ch) {
      for (int y = 0; y < out.h(); ++y) {
        for (int xx = 0; xx < out.w(); ++xx) out.at(i, ch, y, xx) = xv.at(i, ch, y / 2, xx / 2);
      }
    }
  }
  auto* y = g.make(std::move(out), detail::needs(x));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    auto& dx = x->grad_buffer();
    for (int i = 0; i < y->grad.n(); ++i) {
      for (int ch = 0; ch < y->grad.c(); ++ch) {
        for (int yy = 0; yy < y->grad.h(); ++yy) {
          for (int xx = 0; xx < y->grad.w(); ++xx) dx.at(i, ch, yy / 2, xx / 2) += y->grad.at(i, ch, yy, xx);
        }
      }
    }
  };
  return y;
}

template <typename T>
Var<T> concat_channels(Graph<T>& g, Var<T> a, Var<T> b) {
  const auto &av = a->value, &bv = b->value;
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w()) {
    throw ShapeError("concat_channels: " + shape_string(av.shape) + " vs " + shape_string(bv.shape));
  }
  const std::size_t sa = static_cast<std::size_t>(av.c()) * av.plane(), sb = static_cast<std::size_t>(bv.c()) * bv.plane();
  Tensor<T> out(av.n(), av.c() + bv.c(), av.h(), av.w());
  for (int i = 0; i < av.n(); ++i) {
    std::copy(av.sample(i), av.sample(i) + sa, out.sample(i));
    std::copy(bv.sample(i), bv.sample(i) + sb, out.sample(i) + sa);
  }
  auto* y = g.make(std::move(out), detail::needs(a) || detail::needs(b));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    for (int i = 0; i < y->grad.n(); ++i) {
      const T* src = y->grad.sample(i);
      if (detail::needs(a)) {
        T* d = a->grad_buffer().sample(i);
        for (std::size_t j = 0; j < sa; ++j) d[j] += src[j];
      }
      if (detail::needs(b)) {
        T* d = b->grad_buffer().sample(i);
        for (std::size_t j = 0; j < sb; ++j) d[j] += src[sa + j];
      }
    }
  };
  return y;
}

template <typename T>
Var<T> slice_channels(Graph<T>& g, Var<T> x, int begin, int count) {
  const auto& xv = x->value;
  if (begin < 0 || count <= 0 || begin + count > xv.c()) throw ShapeError("slice_channels out of range");
  const std::size_t hw = xv.plane();
  Tensor<T> out(xv.n(), count, xv.h(), xv.w());
  for (int i = 0; i < xv.n(); ++i) {
    const T* src = xv.sample(i) + static_cast<std::size_t>(begin) * hw;
    std::copy(src, src + static_cast<std::size_t>(count) * hw, out.sample(i));
  }
  auto* y = g.make(std::move(out), detail::needs(x));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    auto& dx = x->grad_buffer();
    for (int i = 0; i < dx.n(); ++i) {
      T* d = dx.sample(i) + static_cast<std::size_t>(begin) * hw;
      const T* s = y->grad.sample(i);
      for (std::size_t j = 0; j < static_cast<std::size_t>(count) * hw; ++j) d[j] += s[j];
    }
  };
  return y;
}

/// x (N, D) -> x W^T + b with W (O, D), b (O).
template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  using namespace detail;
  const int n = x->value.n(), d = x->value.c(), o = w->value.n();
  if (w->value.c() != d || x->value.plane() != 1) throw ShapeError("linear: input width does not match weights");
  Tensor<T> out(n, o);
  MapMat<T> out_m(out.data.data(), n, o);
  out_m.noalias() = ConstMapMat<T>(x->value.data.data(), n, d) * ConstMapMat<T>(w->value.data.data(), o, d).transpose();
  if (b) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < o; ++j) out_m(i, j) += b->value.data[static_cast<std::size_t>(j)];
    }
  }
  auto* y = g.make(std::move(out), needs(x) || needs(w) || needs(b));
  if (!g.recording() || !y->requires_grad) return y;
  y->backward = [=]() {
    ConstMapMat<T> dy(y->grad.data.data(), n, o);
    if (needs(w)) MapMat<T>(w->grad_buffer().data.data(), o, d).noalias() += dy.transpose() * ConstMapMat<T>(x->value.data.data(), n, d);
    if (needs(b)) {
      auto& db = b->grad_buffer();
      for (int j = 0; j < o; ++j) db.data[static_cast<std::size_t>(j)] += dy.col(j).sum();
    }
    if (needs(x)) MapMat<T>(x->grad_buffer().data.data(), n, d).noalias() += dy * ConstMapMat<T>(w->value.data.data(), o, d);
  };
  return y;
}

/// mean((pred - target)^2) over every element.
template <typename T>
Var<T> mse(Graph<T>& g, Var<T> pred, const Tensor<T>& target) {
  require_shape(pred->value, target, "mse");
  T total{};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T d = pred->value.data[i] - target.data[i];
    total += d * d;
  }
  const T count = static_cast<T>(target.size());
  auto* y = g.make(Tensor<T>(1, 1, 1, 1, total / count), detail::needs(pred));
  if (!g.recording() || !y->requires_grad) return y;
  auto tgt = std::make_shared<Tensor<T>>(target);
  y->backward = [=]() {
    auto& dp = pred->grad_buffer();
    const T s = T(2) * y->grad.data[0] / count;
    for (std::size_t i = 0; i < dp.size(); ++i) dp.data[i] += s * (pred->value.data[i] - tgt->data[i]);
  };
  return y;
}

/// Mean per-pixel softmax cross entropy; labels are (N, H, W) class indices.
template <typename T>
Var<T> cross_entropy(Graph<T>& g, Var<T> logits, std::span<const int> labels) {
  const auto& lv = logits->value;
  const int n = lv.n(), k = lv.c();
  const std::size_t hw = lv.plane();
  if (labels.size() != static_cast<std::size_t>(n) * hw) throw ShapeError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<Tensor<T>>(lv.n(), lv.c(), lv.h(), lv.w());
  T total{};
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      T m = lv.sample(i)[j];
      for (int c = 1; c < k; ++c) m = std::max(m, lv.sample(i)[static_cast<std::size_t>(c) * hw + j]);
      T z{};
      for (int c = 0; c < k; ++c) {
        const T e = std::exp(lv.sample(i)[static_cast<std::size_t>(c) * hw + j] - m);
        probs->sample(i)[static_cast<std::size_t>(c) * hw + j] = e;
        z += e;
      }
      for (int c = 0; c < k; ++c) probs->sample(i)[static_cast<std::size_t>(c) * hw + j] /= z;
      const int label = labels[static_cast<std::size_t>(i) * hw + j];
      if (label < 0 || label >= k) throw ShapeError("cross_entropy: label out of range");
      total -= std::log(std::max(probs->sample(i)[static_cast<std::size_t>(label) * hw + j], T(1e-30)));
    }
  }
  const T count = static_cast<T>(static_cast<std::size_t>(n) * hw);
  auto* y = g.make(Tensor<T>(1, 1, 1, 1, total / count), detail::needs(logits));
  if (!g.recording() || !y->requires_grad) return y;
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  y->backward = [=]() {
    auto& dl = logits->grad_buffer();
    const T s = y->grad.data[0] / count;
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < hw; ++j) {
        const int label = (*lab)[static_cast<std::size_t>(i) * hw + j];
        for (int c = 0; c < k; ++c) {
          const std::size_t idx = static_cast<std::size_t>(c) * hw + j;
          dl.sample(i)[idx] += s * (probs->sample(i)[idx] - (c == label ? T(1) : T(0)));
        }
      }
    }
  };
  return y;
}

template <typename T>
Var<T> weighted_sum(Graph<T>& g, Var<T> a, T wa, Var<T> b, T wb) {
  return add(g, scale(g, a, wa), scale(g, b, wb));
}

}  // namespace nls::nn
