#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "socnn/param_store.hpp"

namespace socnn {

// Adam moment buffers per parameter name, created lazily at the first step.
template <typename T>
struct AdamState {
  int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double base_lr = 1e-3;
  std::unordered_map<std::string, std::vector<T>> m;
  std::unordered_map<std::string, std::vector<T>> v;
};

// One bias-corrected Adam update using the gradients currently published in
// the store. Parameters without gradients are treated as zero-gradient.
template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& params, double lr_t) {
  if (!(lr_t > 0.0)) throw ValueError("adam_step: lr must be positive");
  state.step_count += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (const auto& name : params.param_names()) {
    Tensor<T>& p = params.at(name);
    const size_t n = p.values().size();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    if (m.size() != n || v.size() != n) {
      throw ShapeError("adam_step: moment size mismatch for '" + name + "'");
    }
    const std::vector<T>* grad = nullptr;
    if (p.has_grad()) {
      grad = &p.grad();
      if (grad->size() != n) throw ShapeError("adam_step: grad size mismatch for '" + name + "'");
    }
    auto& values = p.mutable_values();
    for (size_t i = 0; i < n; ++i) {
      const double g = grad ? static_cast<double>((*grad)[i]) : 0.0;
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      values[i] -= static_cast<T>(lr_t * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

// lr(epoch) = lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2.
inline double cosine_annealing_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs < 1) throw ValueError("cosine_annealing_lr: total_epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs) {
    throw ValueError("cosine_annealing_lr: epoch " + std::to_string(epoch) + " out of [0," +
                     std::to_string(total_epochs) + "]");
  }
  if (!(lr_max >= lr_min) || lr_min < 0.0) {
    throw ValueError("cosine_annealing_lr: need lr_max >= lr_min >= 0");
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Batch-norm momentum schedule: the distance from 1 halves every 30 epochs,
// capped at 0.999.
inline double bn_momentum_for_epoch(double initial_momentum, int epoch, int decay_every = 30) {
  double m = initial_momentum;
  for (int e = decay_every; e <= epoch; e += decay_every) {
    m = 1.0 - (1.0 - m) * 0.5;
  }
  return std::min(m, 0.999);
}

}  // namespace socnn
