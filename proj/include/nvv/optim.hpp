#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "nvv/error.hpp"

namespace nvv {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

/// Moment accumulators for one parameter tensor.
template <class T>
struct AdamState {
  std::vector<T> m, v;
  long step = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t n, AdamHyper h = {}) : m(n, T(0)), v(n, T(0)), hyper(h) {}
};

/// Bias-corrected Adam update, in place.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw config_error("adam_step: parameter, gradient and state sizes differ");
  ++state.step;
  const auto& h = state.hyper;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(h.beta1, static_cast<double>(state.step))));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(h.beta2, static_cast<double>(state.step))));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(h.eps);
  T* m = state.m.data();
  T* v = state.v.data();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    params[i] -= rate * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
  }
}

}  // namespace nvv
