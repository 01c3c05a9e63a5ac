#pragma once

// Simulated quantization and the Laplace rate estimate used as a training
// loss. Bits are -log2 of the probability mass the model puts on the unit
// bin around a (noisy) value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/math.hpp"

namespace nvv {

inline constexpr double kMinScale = 1e-6;
inline constexpr double kMinProbability = 0x1.0p-32;
inline constexpr double kMaxBitsPerEntry = 32.0;  // -log2(kMinProbability)

/// Laplace(mu, b) with b kept as log b so optimizer steps cannot make it
/// non-positive.
template <class T>
struct LaplaceModel {
  T mu = 0;
  T log_b = static_cast<T>(std::log(0.01));

  LaplaceModel() = default;
  LaplaceModel(T mean, T scale) : mu(mean), log_b(std::log(std::max(scale, static_cast<T>(kMinScale)))) {}

  T b() const { return std::max(std::exp(log_b), static_cast<T>(kMinScale)); }
  void set_b(T scale) { log_b = std::log(std::max(scale, static_cast<T>(kMinScale))); }
  /// Keeps b >= kMinScale after an optimizer step.
  void clamp() { log_b = std::max(log_b, static_cast<T>(std::log(kMinScale))); }

  friend bool operator==(const LaplaceModel&, const LaplaceModel&) = default;
};

template <class T>
T laplace_cdf(T x, T mu, T b) {
  const T z = (x - mu) / b;
  return z < T(0) ? T(0.5) * std::exp(z) : T(1) - T(0.5) * std::exp(-z);
}

/// Bits for one value at offset u = y - mu from the mean, with derivatives.
template <class T>
struct BinCost {
  T probability = 0;  // floored at kMinProbability
  T bits = 0;         // -log2(probability)
  T dbits_du = 0;
  T dbits_db = 0;
};

/// Mass of [u - 1/2, u + 1/2] under Laplace(0, b), evaluated in the log
/// domain in the tails so the derivatives stay finite far from the mean.
/// Below the probability floor the value is clamped but the derivatives of
/// the unclamped expression pass through, so outliers keep a gradient
/// toward the mean.
template <class T>
BinCost<T> bin_cost(T u, T b) {
  constexpr T inv_ln2 = T(1.4426950408889634);
  BinCost<T> c;
  const T a = std::abs(u);
  if (a >= T(0.5)) {
    const T tail = std::log1p(-std::exp(-T(1) / b));  // log(1 - e^{-1/b})
    const T log_p = T(-0.6931471805599453) - (a - T(0.5)) / b + tail;
    const T bits = -log_p * inv_ln2;
    const T sign = u > T(0) ? T(1) : T(-1);
    c.dbits_du = sign * inv_ln2 / b;
    c.dbits_db = -inv_ln2 * ((a - T(0.5)) / (b * b) - T(1) / (b * b * std::expm1(T(1) / b)));
    if (bits > T(kMaxBitsPerEntry)) {
      c.bits = T(kMaxBitsPerEntry);
      c.probability = T(kMinProbability);
    } else {
      c.bits = bits;
      c.probability = std::exp(log_p);
    }
    return c;
  }
  const T c1 = u + T(0.5), c2 = T(0.5) - u;
  const T e1 = std::exp(-c1 / b), e2 = std::exp(-c2 / b);
  const T p = T(1) - T(0.5) * (e1 + e2);
  const T dp_du = T(0.5) * (e1 - e2) / b;
  const T dp_db = -T(0.5) * (e1 * c1 + e2 * c2) / (b * b);
  c.probability = std::max(p, T(kMinProbability));
  c.bits = -std::log2(c.probability);
  c.dbits_du = -inv_ln2 * dp_du / p;
  c.dbits_db = -inv_ln2 * dp_db / p;
  return c;
}

/// P(y_hat) ~ cdf(y_tilde + 1/2) - cdf(y_tilde - 1/2), floored at 2^-32.
template <class T>
T pmf(T y_tilde, const LaplaceModel<T>& model) {
  return bin_cost(y_tilde - model.mu, model.b()).probability;
}

/// y + U[-1/2, 1/2), elementwise. The input is not modified.
template <class T>
std::vector<T> simulate_quantize(std::span<const T> values, Rng& rng) {
  std::vector<T> noise(values.size());
  fill_uniform_noise<T>(rng, noise);
  for (std::size_t i = 0; i < values.size(); ++i) noise[i] += values[i];
  return noise;
}

/// Gradient sink for one tensor: d(bits)/d(entry) is added to `values`
/// scaled by `scale`, and the summed (mu, log b) derivatives are added to
/// `mu`/`log_b`.
template <class T>
struct RateGrad {
  std::span<T> values;
  double mu = 0;
  double log_b = 0;
};

/// Total bits of `values` under `model` after adding `noise` (same length;
/// empty means exact values). Accumulates scaled derivatives into `grad`.
template <class T>
double tensor_bits(std::span<const T> values, std::span<const T> noise, const LaplaceModel<T>& model, T scale,
                   RateGrad<T>* grad) {
  const T b = model.b();
  const bool clamped = std::exp(model.log_b) < static_cast<T>(kMinScale);
  double total = 0, dmu = 0, db = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T y = noise.empty() ? values[i] : values[i] + noise[i];
    const auto c = bin_cost(y - model.mu, b);
    total += c.bits;
    if (grad) {
      grad->values[i] += scale * c.dbits_du;
      dmu -= c.dbits_du;
      db += c.dbits_db;
    }
  }
  if (grad) {
    grad->mu += static_cast<double>(scale) * dmu;
    grad->log_b += clamped ? 0.0 : static_cast<double>(scale) * db * static_cast<double>(b);
  }
  return total;
}

/// Bits with true rounding in place of the noise: the deterministic
/// counterpart of the training estimate, comparable to coded payload sizes.
template <class T>
double rounded_bits(std::span<const T> values, const LaplaceModel<T>& model) {
  const T b = model.b();
  double total = 0;
  for (T v : values) {
    const T q = std::round(v);  // half away from zero
    total += bin_cost(q - model.mu, b).bits;
  }
  return total;
}

/// A named tensor subject to the rate term together with its model.
template <class T>
struct BundleEntry {
  std::string name;
  std::span<const T> values;
  LaplaceModel<T>* model = nullptr;
};

template <class T>
using TensorBundle = std::vector<BundleEntry<T>>;

template <class T>
struct RateLoss {
  double bits_per_entry = 0;  // (1/N) sum -log2 P
  std::vector<std::vector<T>> value_grads;
  std::vector<double> mu_grads;
  std::vector<double> log_b_grads;
};

/// Mean bits per entry over the whole bundle with simulated quantization,
/// and gradients of that mean wrt every entry and every (mu, log b).
template <class T>
RateLoss<T> rate_loss(const TensorBundle<T>& bundle, Rng& rng) {
  if (bundle.empty()) throw config_error("rate_loss needs at least one tensor");
  std::size_t n = 0;
  for (const auto& e : bundle) {
    if (!e.model) throw config_error("tensor '" + e.name + "' has no entropy model");
    n += e.values.size();
  }
  if (n == 0) throw config_error("rate_loss over zero entries");
  RateLoss<T> out;
  const T scale = static_cast<T>(1.0 / static_cast<double>(n));
  double bits = 0;
  std::vector<T> noise;
  for (const auto& e : bundle) {
    noise.resize(e.values.size());
    fill_uniform_noise<T>(rng, noise);
    out.value_grads.emplace_back(e.values.size(), T(0));
    RateGrad<T> g{out.value_grads.back()};
    bits += tensor_bits<T>(e.values, noise, *e.model, scale, &g);
    out.mu_grads.push_back(g.mu);
    out.log_b_grads.push_back(g.log_b);
  }
  out.bits_per_entry = bits / static_cast<double>(n);
  return out;
}

}  // namespace nvv
