#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "nls/nn/tensor.hpp"

namespace nls::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  void zero_grad() {
    grad.shape = value.shape;
    grad.data.assign(value.size(), T{});
  }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  Param<T>* param = nullptr;
  std::function<void()> backward;

  // Zero-filled on first use.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) {
      grad.shape = value.shape;
      grad.data.assign(value.size(), T{});
    }
    return grad;
  }
};

template <typename T>
using Var = Node<T>*;

/// Records operations for one forward pass. With recording off no backward
/// state is kept, which is what inference uses.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value) {
    auto* node = &nodes_.emplace_back();
    node->value = std::move(value);
    return node;
  }

  Var<T> param(Param<T>& p) {
    auto* node = &nodes_.emplace_back();
    node->value = p.value;
    node->param = &p;
    node->requires_grad = record_ && !p.frozen;
    return node;
  }

  Var<T> make(Tensor<T> value, bool requires_grad) {
    auto* node = &nodes_.emplace_back();
    node->value = std::move(value);
    node->requires_grad = record_ && requires_grad;
    return node;
  }

  /// Seeds d(loss)/d(loss) = 1, runs every recorded backward in reverse
  /// creation order, and adds leaf gradients into their parameters.
  void backward(Var<T> loss) {
    if (!record_) throw ConfigurationError("backward on a graph that was not recording");
    if (loss->value.size() != 1) throw ShapeError("backward needs a scalar loss");
    if (!loss->requires_grad) return;
    loss->grad_buffer().data[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backward && it->grad.size() == it->value.size()) it->backward();
    }
    for (auto& node : nodes_) {
      if (!node.param || !node.requires_grad || node.grad.size() != node.value.size()) continue;
      auto& g = node.param->grad;
      if (g.size() != node.value.size()) node.param->zero_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += node.grad.data[i];
    }
  }

 private:
  bool record_;
  std::deque<Node<T>> nodes_;
};

}  // namespace nls::nn
