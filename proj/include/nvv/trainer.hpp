#pragma once

// Per-frame optimization of distortion + lambda1 * rate + lambda2 * |R|_1.
// I-frames train coefficient grid, basis pyramid and MLP; P-frames train a
// coefficient grid and a residual pyramid on top of the decoded basis of the
// previous frame, with the MLP frozen.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/field_set.hpp"
#include "nvv/log.hpp"
#include "nvv/optim.hpp"
#include "nvv/rate_model.hpp"

namespace nvv {

struct TrainConfig {
  double lambda1 = 1e-4;
  double lambda2 = 1e-4;
  int gof_length = 20;
  int iframe_iters = 4000;
  int pframe_iters = 1500;
  int rays_per_batch = 4096;
  int samples_per_ray = 64;
  double lr_grid = 0.02;
  double lr_mlp = 1e-3;
  double lr_laplace = 1e-3;
  double init_b = 0.01;
  double init_grid = 1.0;  // grids start uniform in +-init_grid
  std::uint64_t seed = 1;
  bool warm_start = true;          // P-frame C_t starts from the previous frame
  bool iframe_warm_start = false;  // later I-frames start from the previous frame
  bool freeze_mlp_after_first_gof = false;
  FieldLayout layout;
  Vec3<double> background{1, 1, 1};

  /// lambda1 multiplies the mean bits per entry, so it is scaled by the
  /// batch size to stay comparable with the summed distortion.
  double rate_weight() const { return lambda1 * rays_per_batch; }
  double reg_weight() const { return lambda2; }

  void validate() const {
    if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw config_error("lambda1 and lambda2 must be >= 0");
    if (gof_length < 1) throw config_error("gof_length must be >= 1");
    if (iframe_iters < 0 || pframe_iters < 0) throw config_error("iteration counts must be >= 0");
    if (rays_per_batch < 1 || samples_per_ray < 1) throw config_error("rays and samples per batch must be >= 1");
    if (!(lr_grid > 0 && lr_mlp > 0 && lr_laplace > 0)) throw config_error("learning rates must be positive");
    if (!(init_b > 0)) throw config_error("init_b must be positive");
    if (!(init_grid >= 0)) throw config_error("init_grid must be >= 0");
    layout.validate();
  }
};

/// Training rays of one frame with their target colors.
struct FrameRays {
  RayBatch rays;
  std::vector<Vec3<float>> target;

  std::size_t size() const { return rays.size(); }
};

/// Rays of every given view; rays that miss the scene box are skipped
/// (they show the background regardless of the model).
inline FrameRays make_frame_rays(std::span<const Camera> cams, std::span<const Image> images) {
  if (cams.size() != images.size()) throw config_error("camera and image counts differ");
  FrameRays out;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    if (images[v].width != cams[v].width || images[v].height != cams[v].height)
      throw config_error("image " + std::to_string(v) + " does not match its camera resolution");
    const RayBatch r = generate_rays(cams[v]);
    for (std::size_t i = 0; i < r.size(); ++i) {
      out.rays.origins.push_back(r.origins[i]);
      out.rays.directions.push_back(r.directions[i]);
      out.rays.pixels.push_back(r.pixels[i]);
      out.rays.near.push_back(r.near[i]);
      out.rays.far.push_back(r.far[i]);
      out.target.push_back(images[v].pixel(r.pixels[i]));
    }
  }
  if (out.size() == 0) throw config_error("no training ray hits the scene box");
  return out;
}

/// Reconstructed state shared by encoder and decoder within a GOF.
template <class T>
struct DecodedFrameBuffer {
  BasisPyramid<T> basis;  // B_hat of the latest frame
  TinyMlp<T> mlp;
  int dir_octaves = 0;
};

/// Trainable state of one frame. For P-frames `fields.basis` is kept equal
/// to prev + residual.
template <class T>
struct FrameState {
  FrameFields<T> fields;
  std::optional<BasisPyramid<T>> prev;
  ResidualPyramid<T> residual;
  // models[0] covers the coefficient grid, models[1 + l] basis (I) or
  // residual (P) level l.
  std::vector<LaplaceModel<T>> models;

  bool pframe() const { return prev.has_value(); }

  /// Level tensors subject to the rate term: basis levels or residual levels.
  std::span<const T> level_values(std::size_t l) const {
    return pframe() ? residual.levels[l].values() : fields.basis[l].grid.values();
  }

  TensorBundle<T> bundle() {
    TensorBundle<T> b;
    b.push_back({"coef", fields.coef.values(), &models[0]});
    for (std::size_t l = 0; l < fields.basis.size(); ++l)
      b.push_back({(pframe() ? "residual" : "basis") + std::to_string(l), level_values(l), &models[1 + l]});
    return b;
  }

  void refresh_basis() {
    if (pframe()) fields.basis = apply_residual(*prev, residual);
  }
};

struct LossTerms {
  double distortion = 0;  // summed over the batch
  double rate = 0;        // mean bits per entry (noisy estimate)
  double reg = 0;         // |R|_1, P-frames only
  double total = 0;
};

/// Gradient buffers for a FrameState. `levels` holds basis (I) or residual
/// (P) gradients; `models` holds (d mu, d log b) pairs.
template <class T>
struct StateGrads {
  FieldGrads<T> field;
  std::vector<T> models;

  static StateGrads like(const FrameState<T>& s) {
    StateGrads g;
    g.field = FieldGrads<T>::like(s.fields);
    g.models.assign(2 * s.models.size(), T(0));
    return g;
  }
  void zero() {
    field.zero();
    std::fill(models.begin(), models.end(), T(0));
  }
};

/// Distortion of rendered vs target colors with its pixel gradient.
template <class T>
double squared_error(std::span<const Vec3<T>> rendered, std::span<const Vec3<float>> target,
                     std::vector<Vec3<T>>* dpixel) {
  if (rendered.size() != target.size()) throw contract_error("rendered and target batches differ in size");
  double d = 0;
  if (dpixel) dpixel->resize(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const Vec3<T> e = rendered[i] - target[i].template cast<T>();
    d += static_cast<double>(dot(e, e));
    if (dpixel) (*dpixel)[i] = e * T(2);
  }
  return d;
}

/// Full objective for one batch: renders rays `ids`, and when `grads` is
/// given accumulates the gradient of the total loss wrt every trainable
/// tensor of `state`. Stochastic parts draw from the passed generators only.
template <class T>
LossTerms frame_objective(FrameState<T>& state, const FrameRays& data, std::span<const std::uint32_t> ids,
                          const TrainConfig& cfg, Rng* sample_rng, Rng* noise_rng, Rng& rate_rng,
                          BatchWorkspace<T>& ws, StateGrads<T>* grads, bool mlp_grads) {
  PipelineOptions opt;
  opt.samples_per_ray = cfg.samples_per_ray;
  opt.sample_rng = sample_rng;
  opt.noise_rng = noise_rng;
  const Vec3<T> bg = cfg.background.template cast<T>();
  forward_batch(state.fields, data.rays, ids, bg, opt, ws);

  std::vector<Vec3<float>> target(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) target[i] = data.target[ids[i]];
  std::vector<Vec3<T>> dpixel;
  LossTerms terms;
  terms.distortion = squared_error<T>(ws.pixel, target, grads ? &dpixel : nullptr);

  const double w_rate = cfg.rate_weight(), w_reg = cfg.reg_weight();
  RateLoss<T> rate = rate_loss<T>(state.bundle(), rate_rng);
  terms.rate = rate.bits_per_entry;
  if (state.pframe()) {
    double reg = 0;
    for (const auto& g : state.residual.levels)
      for (T v : g.values()) reg += std::abs(static_cast<double>(v));
    terms.reg = reg;
  }
  terms.total = terms.distortion + w_rate * terms.rate + w_reg * terms.reg;
  if (!grads) return terms;

  backward_batch<T>(state.fields, bg, dpixel, ws, grads->field, mlp_grads);
  const T wr = static_cast<T>(w_rate), wl = static_cast<T>(w_reg);
  auto add = [](std::span<T> dst, std::span<const T> src, T s) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  };
  add(grads->field.coef.values(), rate.value_grads[0], wr);
  for (std::size_t l = 0; l < state.fields.basis.size(); ++l) {
    auto dst = grads->field.basis[l].values();
    add(dst, rate.value_grads[1 + l], wr);
    if (state.pframe()) {
      const auto r = state.residual.levels[l].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r[i] > T(0) ? wl : (r[i] < T(0) ? -wl : T(0));
    }
  }
  for (std::size_t m = 0; m < state.models.size(); ++m) {
    grads->models[2 * m] += static_cast<T>(w_rate * rate.mu_grads[m]);
    grads->models[2 * m + 1] += static_cast<T>(w_rate * rate.log_b_grads[m]);
  }
  return terms;
}

struct TrainMetrics {
  std::vector<double> loss;  // total loss per iteration
  LossTerms last;
};

/// Adam states for every trainable tensor of a FrameState.
template <class T>
struct StateOptimizer {
  AdamState<T> coef, mlp, models;
  std::vector<AdamState<T>> levels;

  explicit StateOptimizer(const FrameState<T>& s) {
    AdamHyper h;
    coef = AdamState<T>(s.fields.coef.size(), h);
    mlp = AdamState<T>(s.fields.mlp.params().size(), h);
    models = AdamState<T>(2 * s.models.size(), h);
    for (std::size_t l = 0; l < s.fields.basis.size(); ++l) levels.emplace_back(s.level_values(l).size(), h);
  }

  void step(FrameState<T>& s, const StateGrads<T>& g, const TrainConfig& cfg, bool train_mlp) {
    adam_step<T>(s.fields.coef.values(), g.field.coef.values(), coef, cfg.lr_grid);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      auto dst = s.pframe() ? s.residual.levels[l].values() : s.fields.basis[l].grid.values();
      adam_step<T>(dst, g.field.basis[l].values(), levels[l], cfg.lr_grid);
    }
    if (train_mlp) adam_step<T>(s.fields.mlp.params(), g.field.mlp, mlp, cfg.lr_mlp);
    std::vector<T> flat(2 * s.models.size());
    for (std::size_t m = 0; m < s.models.size(); ++m) {
      flat[2 * m] = s.models[m].mu;
      flat[2 * m + 1] = s.models[m].log_b;
    }
    adam_step<T>(flat, g.models, models, cfg.lr_laplace);
    for (std::size_t m = 0; m < s.models.size(); ++m) {
      s.models[m].mu = flat[2 * m];
      s.models[m].log_b = flat[2 * m + 1];
      s.models[m].clamp();
    }
    s.refresh_basis();
  }
};

/// Per-run generators, derived from the seed and the frame index so any
/// frame can be retrained in isolation.
struct FrameRngs {
  Rng rays, samples, noise, rate;

  FrameRngs(std::uint64_t seed, std::uint64_t frame) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(frame), 0x6e7676u};
    std::uint64_t s[4];
    std::vector<std::uint32_t> words(8);
    seq.generate(words.begin(), words.end());
    for (int i = 0; i < 4; ++i) s[i] = (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1];
    rays.seed(s[0]);
    samples.seed(s[1]);
    noise.seed(s[2]);
    rate.seed(s[3]);
  }
};

template <class T>
TrainMetrics run_training(FrameState<T>& state, const FrameRays& data, const TrainConfig& cfg, int iters,
                          bool train_mlp, FrameRngs& rng) {
  TrainMetrics metrics;
  metrics.loss.reserve(iters);
  StateOptimizer<T> opt(state);
  auto grads = StateGrads<T>::like(state);
  BatchWorkspace<T> ws;
  std::vector<std::uint32_t> ids(cfg.rays_per_batch);
  const std::uint64_t n = data.size();
  for (int it = 0; it < iters; ++it) {
    for (auto& id : ids) id = static_cast<std::uint32_t>(rng.rays() % n);
    grads.zero();
    metrics.last = frame_objective<T>(state, data, ids, cfg, &rng.samples, &rng.noise, rng.rate, ws, &grads, train_mlp);
    if (!std::isfinite(metrics.last.total)) throw range_error("training diverged (non-finite loss)");
    metrics.loss.push_back(metrics.last.total);
    opt.step(state, grads, cfg, train_mlp);
  }
  return metrics;
}

template <class T>
void fill_uniform_grid(Grid3D<T>& g, Rng& rng, double scale) {
  for (T& v : g.values()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * scale);
}

/// Fresh I-frame state: uniform grids, Glorot MLP, Laplace(0, init_b).
template <class T>
FrameState<T> init_iframe_state(const TrainConfig& cfg, Rng& rng) {
  FrameState<T> s;
  s.fields = FrameFields<T>::zeros(cfg.layout);
  fill_uniform_grid(s.fields.coef, rng, cfg.init_grid);
  for (auto& l : s.fields.basis.levels()) fill_uniform_grid(l.grid, rng, cfg.init_grid);
  s.fields.mlp = TinyMlp<T>::glorot(cfg.layout.mlp_shape(), rng);
  s.models.assign(1 + s.fields.basis.size(), LaplaceModel<T>(T(0), static_cast<T>(cfg.init_b)));
  return s;
}

/// Trains an I-frame. `warm` (optional) supplies starting fields and models.
template <class T>
FrameState<T> train_iframe(const FrameRays& data, const TrainConfig& cfg, std::uint64_t frame_index,
                           const FrameState<T>* warm = nullptr, TrainMetrics* metrics = nullptr,
                           bool train_mlp = true) {
  cfg.validate();
  if (data.size() == 0) throw config_error("I-frame needs at least one training view");
  FrameRngs rng(cfg.seed, frame_index);
  FrameState<T> s;
  if (warm) {
    s.fields = warm->fields;
    s.models = warm->models;
    if (warm->pframe()) {
      // Start from the P-frame's reconstructed basis; its residual models
      // do not describe a basis, so restart those.
      for (std::size_t l = 1; l < s.models.size(); ++l) s.models[l] = LaplaceModel<T>(T(0), static_cast<T>(cfg.init_b));
    }
  } else {
    s = init_iframe_state<T>(cfg, rng.noise);
  }
  auto m = run_training<T>(s, data, cfg, cfg.iframe_iters, train_mlp, rng);
  if (metrics) *metrics = std::move(m);
  return s;
}

/// Trains a P-frame against the decoded buffer. `warm` (optional) supplies
/// the previous frame's coefficient grid and models.
template <class T>
FrameState<T> train_pframe(const FrameRays& data, const DecodedFrameBuffer<T>* buffer, const TrainConfig& cfg,
                           std::uint64_t frame_index, const FrameState<T>* warm = nullptr,
                           TrainMetrics* metrics = nullptr) {
  cfg.validate();
  if (!buffer) throw config_error("P-frame training needs a decoded frame buffer");
  if (data.size() == 0) throw config_error("P-frame needs at least one training view");
  FrameRngs rng(cfg.seed, frame_index);
  FrameState<T> s;
  s.fields.basis = buffer->basis;
  s.fields.mlp = buffer->mlp;
  s.fields.dir_octaves = buffer->dir_octaves;
  s.prev = buffer->basis;
  s.residual = ResidualPyramid<T>::zeros_like(buffer->basis);
  const LaplaceModel<T> fresh(T(0), static_cast<T>(cfg.init_b));
  s.models.assign(1 + buffer->basis.size(), fresh);
  if (warm && cfg.warm_start) {
    s.fields.coef = warm->fields.coef;
    s.models[0] = warm->models[0];
    if (warm->pframe())
      for (std::size_t l = 1; l < s.models.size(); ++l) s.models[l] = warm->models[l];
  } else {
    s.fields.coef = Grid3D<T>(cfg.layout.coef_dims, cfg.layout.coef_channels());
    fill_uniform_grid(s.fields.coef, rng.noise, cfg.init_grid);
  }
  s.fields.validate();
  auto m = run_training<T>(s, data, cfg, cfg.pframe_iters, false, rng);
  if (metrics) *metrics = std::move(m);
  return s;
}

}  // namespace nvv
