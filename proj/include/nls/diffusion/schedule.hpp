#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nls/core/error.hpp"

namespace nls::diffusion {

/// Linear beta schedule. Timesteps are 1-based: beta(t) is betas[t - 1].
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cumprod;

  double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alphas_cumprod[static_cast<std::size_t>(t - 1)]; }

  void check_timestep(int t) const {
    if (t < 1 || t > steps) {
      throw ParameterError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
    }
  }
};

inline NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 2) throw ParameterError("schedule needs at least 2 steps, got " + std::to_string(steps));
  if (!(beta_min > 0) || !(beta_min <= beta_max) || !(beta_max < 1)) {
    throw ParameterError("schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alphas_cumprod.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double beta = beta_min + (beta_max - beta_min) * i / (steps - 1);
    s.betas[static_cast<std::size_t>(i)] = beta;
    prod *= 1.0 - beta;
    s.alphas_cumprod[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

/// z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps, elementwise.
template <typename T>
void forward_noise(std::span<const T> z0, int t, std::span<const T> eps, const NoiseSchedule& schedule,
                   std::span<T> out) {
  schedule.check_timestep(t);
  if (z0.size() != eps.size() || z0.size() != out.size()) throw ShapeError("forward_noise: size mismatch");
  const double a = std::sqrt(schedule.alpha_bar(t)), b = std::sqrt(1.0 - schedule.alpha_bar(t));
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = static_cast<T>(a * z0[i] + b * eps[i]);
}

template <typename T>
std::vector<T> forward_noise(const std::vector<T>& z0, int t, const std::vector<T>& eps, const NoiseSchedule& schedule) {
  std::vector<T> out(z0.size());
  forward_noise<T>(std::span<const T>(z0), t, std::span<const T>(eps), schedule, std::span<T>(out));
  return out;
}

}  // namespace nls::diffusion
