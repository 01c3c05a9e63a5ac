#pragma once

// A renderable frame: coefficient grid, basis pyramid and MLP, plus the
// batched ray pipeline used both for training (forward + backward) and for
// rendering (forward only).
//
//   feature(x) = (interp(x, C) + n_c) * (interp(sawtooth(x), B) + n_b)
//   (rgb, sigma) = MLP(feature(x), encode(d))
//
// n_c, n_b are simulated-quantization noise terms, present only in training.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/grid_field.hpp"
#include "nvv/math.hpp"
#include "nvv/radiance_model.hpp"
#include "nvv/volume_renderer.hpp"

namespace nvv {

/// Grid and MLP sizes shared by encoder and decoder.
struct FieldLayout {
  Dims3 coef_dims{32, 32, 32};
  std::vector<Dims3> basis_dims{{16, 16, 16}, {24, 24, 24}, {32, 32, 32}};
  int basis_channels = 4;  // per level
  std::vector<int> basis_freqs{2, 4, 8};
  std::vector<int> mlp_hidden{64, 64};
  int dir_octaves = 2;

  int levels() const { return static_cast<int>(basis_dims.size()); }
  int coef_channels() const { return basis_channels * levels(); }
  MlpShape mlp_shape() const {
    return {coef_channels() + direction_encoding_width(dir_octaves), mlp_hidden, kRadianceOutputs};
  }
  void validate() const {
    if (basis_dims.empty()) throw config_error("layout needs at least one basis level");
    if (basis_dims.size() != basis_freqs.size()) throw config_error("one frequency per basis level required");
    if (basis_channels < 1) throw config_error("basis channels must be positive");
    if (dir_octaves < 0) throw config_error("direction octaves must be >= 0");
    mlp_shape().validate();
  }
  friend bool operator==(const FieldLayout&, const FieldLayout&) = default;
};

template <class T>
struct FrameFields {
  Grid3D<T> coef;
  BasisPyramid<T> basis;
  TinyMlp<T> mlp;
  int dir_octaves = 0;

  static FrameFields zeros(const FieldLayout& layout) {
    layout.validate();
    FrameFields f;
    f.coef = Grid3D<T>(layout.coef_dims, layout.coef_channels());
    std::vector<BasisLevel<T>> levels;
    for (int l = 0; l < layout.levels(); ++l)
      levels.push_back({Grid3D<T>(layout.basis_dims[l], layout.basis_channels), layout.basis_freqs[l]});
    f.basis = BasisPyramid<T>(std::move(levels));
    f.mlp = TinyMlp<T>(layout.mlp_shape());
    f.dir_octaves = layout.dir_octaves;
    return f;
  }

  void validate() const {
    basis.validate();
    if (coef.channels() != basis.total_channels())
      throw config_error("coefficient channels " + std::to_string(coef.channels()) + " != basis channels " +
                         std::to_string(basis.total_channels()));
    if (mlp.shape().input != coef.channels() + direction_encoding_width(dir_octaves))
      throw config_error("MLP input width does not match features + direction encoding");
  }

  template <class U>
  FrameFields<U> cast() const {
    FrameFields<U> out;
    out.coef = coef.template cast<U>();
    std::vector<BasisLevel<U>> levels;
    for (const auto& l : basis.levels()) levels.push_back({l.grid.template cast<U>(), l.frequency});
    out.basis = BasisPyramid<U>(std::move(levels));
    out.mlp = mlp.template cast<U>();
    out.dir_octaves = dir_octaves;
    return out;
  }

  friend bool operator==(const FrameFields&, const FrameFields&) = default;
};

/// Gradient buffers shaped like a FrameFields.
template <class T>
struct FieldGrads {
  Grid3D<T> coef;
  std::vector<Grid3D<T>> basis;
  std::vector<T> mlp;

  static FieldGrads like(const FrameFields<T>& f) {
    FieldGrads g;
    g.coef = Grid3D<T>(f.coef.dims(), f.coef.channels());
    for (const auto& l : f.basis.levels()) g.basis.emplace_back(l.grid.dims(), l.grid.channels());
    g.mlp.assign(f.mlp.params().size(), T(0));
    return g;
  }
  void zero() {
    coef.fill(T(0));
    for (auto& b : basis) b.fill(T(0));
    std::fill(mlp.begin(), mlp.end(), T(0));
  }
};

/// Scratch space for one ray batch; reused across iterations.
template <class T>
struct BatchWorkspace {
  std::size_t rays = 0;
  int per_ray = 0;
  std::vector<Vec3<T>> points;
  std::vector<T> t, delta;
  std::vector<Stencil<T>> coef_stencils;
  std::vector<Stencil<T>> basis_stencils;  // level-major
  std::vector<T> coef_feat, basis_feat;     // point-major, noisy when training
  MlpWorkspace<T> mlp;
  std::vector<PointRadiance<T>> radiance;
  std::vector<Vec3<T>> pixel;
  std::vector<T> dout, dinput;
  std::vector<Vec3<T>> drgb;
  std::vector<T> dsigma;
  std::vector<double> jitter;
};

struct PipelineOptions {
  int samples_per_ray = 64;
  Rng* sample_rng = nullptr;  // stratified placement when set, midpoints otherwise
  Rng* noise_rng = nullptr;   // simulated quantization of features when set
};

/// Forward pass over rays `ids` of `rays`; fills ws.pixel.
template <class T>
void forward_batch(const FrameFields<T>& f, const RayBatch& rays, std::span<const std::uint32_t> ids,
                   Vec3<T> background, const PipelineOptions& opt, BatchWorkspace<T>& ws) {
  const int n = opt.samples_per_ray;
  if (n < 1) throw config_error("need at least one sample per ray");
  const std::size_t r_count = ids.size();
  const std::size_t m_count = r_count * n;
  const int channels = f.coef.channels();
  const int levels = static_cast<int>(f.basis.size());
  const int dir_w = direction_encoding_width(f.dir_octaves);
  const auto& shape = f.mlp.shape();
  if (shape.input != channels + dir_w || f.basis.total_channels() != channels)
    throw config_error("field set widths are inconsistent");

  ws.rays = r_count;
  ws.per_ray = n;
  ws.points.resize(m_count);
  ws.t.resize(m_count);
  ws.delta.resize(m_count);
  ws.jitter.resize(n);
  for (std::size_t r = 0; r < r_count; ++r) {
    const auto id = ids[r];
    if (opt.sample_rng)
      for (auto& j : ws.jitter) j = uniform01(*opt.sample_rng);
    place_samples(rays.origins[id], rays.directions[id], rays.near[id], rays.far[id], n,
                  opt.sample_rng ? ws.jitter.data() : nullptr, ws.t.data() + r * n, ws.delta.data() + r * n,
                  ws.points.data() + r * n);
  }

  ws.coef_stencils.resize(m_count);
  ws.basis_stencils.resize(m_count * levels);
  ws.coef_feat.resize(m_count * channels);
  ws.basis_feat.resize(m_count * channels);
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto p = ws.points[m];
    auto& cs = ws.coef_stencils[m];
    cs = trilinear_stencil(f.coef.dims(), channels, p);
    gather(f.coef.data(), channels, cs, ws.coef_feat.data() + m * channels);
    T* dst = ws.basis_feat.data() + m * channels;
    for (int l = 0; l < levels; ++l) {
      const auto& level = f.basis[l];
      auto& bs = ws.basis_stencils[l * m_count + m];
      bs = trilinear_stencil(level.grid.dims(), level.grid.channels(), sawtooth(p, level.frequency));
      gather(level.grid.data(), level.grid.channels(), bs, dst);
      dst += level.grid.channels();
    }
  }
  if (opt.noise_rng) {
    std::vector<T> noise(ws.coef_feat.size());
    fill_uniform_noise<T>(*opt.noise_rng, noise);
    for (std::size_t i = 0; i < noise.size(); ++i) ws.coef_feat[i] += noise[i];
    fill_uniform_noise<T>(*opt.noise_rng, noise);
    for (std::size_t i = 0; i < noise.size(); ++i) ws.basis_feat[i] += noise[i];
  }

  ws.mlp.resize(shape, m_count);
  T* in = ws.mlp.input();
  for (std::size_t m = 0; m < m_count; ++m) {
    const T* cf = ws.coef_feat.data() + m * channels;
    const T* bf = ws.basis_feat.data() + m * channels;
    for (int k = 0; k < channels; ++k) in[k * m_count + m] = cf[k] * bf[k];
  }
  for (std::size_t r = 0; r < r_count; ++r) {
    const auto enc = encode_direction(rays.directions[ids[r]].template cast<T>(), f.dir_octaves);
    for (int k = 0; k < dir_w; ++k) {
      T* row = in + (channels + k) * m_count + r * n;
      for (int i = 0; i < n; ++i) row[i] = enc[k];
    }
  }
  mlp_forward(f.mlp, ws.mlp);

  ws.radiance.resize(m_count);
  const T* raw = ws.mlp.output();
  for (std::size_t m = 0; m < m_count; ++m) ws.radiance[m] = radiance_head(raw + m, m_count);

  ws.pixel.resize(r_count);
  std::vector<Vec3<T>> colors(n);
  std::vector<T> sigmas(n);
  for (std::size_t r = 0; r < r_count; ++r) {
    for (int i = 0; i < n; ++i) {
      colors[i] = ws.radiance[r * n + i].rgb;
      sigmas[i] = ws.radiance[r * n + i].sigma;
    }
    ws.pixel[r] = composite<T>(colors, sigmas, std::span<const T>(ws.delta.data() + r * n, n), background).rgb;
  }
}

/// Backward pass for the batch held in `ws`, given d(loss)/d(pixel) per ray.
/// Grid gradients are always accumulated; MLP gradients only when
/// `mlp_grads` is true.
template <class T>
void backward_batch(const FrameFields<T>& f, Vec3<T> background, std::span<const Vec3<T>> dpixel,
                    BatchWorkspace<T>& ws, FieldGrads<T>& grads, bool mlp_grads) {
  const std::size_t r_count = ws.rays;
  const int n = ws.per_ray;
  const std::size_t m_count = r_count * n;
  const int channels = f.coef.channels();
  const int levels = static_cast<int>(f.basis.size());

  ws.drgb.resize(m_count);
  ws.dsigma.resize(m_count);
  std::vector<Vec3<T>> colors(n);
  std::vector<T> sigmas(n);
  for (std::size_t r = 0; r < r_count; ++r) {
    for (int i = 0; i < n; ++i) {
      colors[i] = ws.radiance[r * n + i].rgb;
      sigmas[i] = ws.radiance[r * n + i].sigma;
    }
    composite_backward<T>(colors, sigmas, std::span<const T>(ws.delta.data() + r * n, n), background, dpixel[r],
                          std::span<Vec3<T>>(ws.drgb.data() + r * n, n),
                          std::span<T>(ws.dsigma.data() + r * n, n));
  }

  ws.dout.resize(static_cast<std::size_t>(kRadianceOutputs) * m_count);
  const T* raw = ws.mlp.output();
  for (std::size_t m = 0; m < m_count; ++m)
    radiance_head_backward(raw + m, m_count, ws.radiance[m], ws.drgb[m], ws.dsigma[m], ws.dout.data() + m);

  ws.dinput.resize(static_cast<std::size_t>(channels) * m_count);
  mlp_backward(f.mlp, ws.mlp, ws.dout, mlp_grads ? std::span<T>(grads.mlp) : std::span<T>(), ws.dinput.data(),
               channels);

  T dc[64], db[64];
  if (channels > 64) throw config_error("at most 64 feature channels supported");
  for (std::size_t m = 0; m < m_count; ++m) {
    const T* cf = ws.coef_feat.data() + m * channels;
    const T* bf = ws.basis_feat.data() + m * channels;
    for (int k = 0; k < channels; ++k) {
      const T g = ws.dinput[k * m_count + m];
      dc[k] = g * bf[k];
      db[k] = g * cf[k];
    }
    scatter(grads.coef.data(), channels, ws.coef_stencils[m], dc);
    const T* src = db;
    for (int l = 0; l < levels; ++l) {
      const int lc = f.basis[l].grid.channels();
      scatter(grads.basis[l].data(), lc, ws.basis_stencils[l * m_count + m], src);
      src += lc;
    }
  }
}

/// Deterministic full-frame render; rays missing the cube show the background.
template <class T>
Image render_image(const FrameFields<T>& f, const Camera& cam, int samples_per_ray, Vec3<T> background,
                   std::size_t chunk = 4096) {
  Image img(cam.width, cam.height, background.template cast<float>());
  const RayBatch rays = generate_rays(cam);
  if (rays.size() == 0) return img;
  BatchWorkspace<T> ws;
  PipelineOptions opt;
  opt.samples_per_ray = samples_per_ray;
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<std::uint32_t> ids;
  for (std::size_t r0 = 0; r0 < rays.size(); r0 += chunk) {
    const std::size_t r1 = std::min(rays.size(), r0 + chunk);
    ids.resize(r1 - r0);
    for (std::size_t r = r0; r < r1; ++r) ids[r - r0] = static_cast<std::uint32_t>(r);
    forward_batch(f, rays, ids, background, opt, ws);
    for (std::size_t r = r0; r < r1; ++r) img.set_pixel(rays.pixels[r], ws.pixel[r - r0].template cast<float>());
  }
  return img;
}

}  // namespace nvv
