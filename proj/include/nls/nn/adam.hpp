#pragma once

#include <cmath>
#include <vector>

#include "nls/nn/layers.hpp"

namespace nls::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient norm cap; <= 0 disables
};

/// Updates only the parameters that are not frozen.
template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamConfig config) : config_(config) {
    for (auto* p : params) {
      if (p->frozen) continue;
      params_.push_back(p);
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    double norm2 = 0;
    for (auto* p : params_) {
      for (std::size_t i = 0; i < p->grad.size(); ++i) norm2 += static_cast<double>(p->grad.data[i]) * p->grad.data[i];
    }
    const double norm = std::sqrt(norm2);
    const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    const double c1 = 1.0 - std::pow(config_.beta1, t_), c2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      if (p->grad.size() != p->value.size()) continue;
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = clip * static_cast<double>(p->grad.data[i]);
        m_[k][i] = config_.beta1 * m_[k][i] + (1 - config_.beta1) * g;
        v_[k][i] = config_.beta2 * v_[k][i] + (1 - config_.beta2) * g * g;
        const double update = config_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + config_.epsilon);
        p->value.data[i] = static_cast<T>(static_cast<double>(p->value.data[i]) - update);
      }
    }
  }

  int steps() const { return t_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  ParamList<T> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

}  // namespace nls::nn
