#pragma once

// Dense 3D feature grids over the unit cube: the coefficient grid, the
// multi-level basis pyramid, and per-frame residual pyramids. Sampling is
// trilinear with node-aligned corners (node 0 at coordinate 0, node n-1 at 1).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/math.hpp"

namespace nvv {

struct Dims3 {
  int nx = 0, ny = 0, nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

inline std::string to_string(const Dims3& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

/// Channel-last dense grid; element (x, y, z, c) lives at
/// ((z * ny + y) * nx + x) * channels + c.
template <class T>
class Grid3D {
 public:
  Grid3D() = default;
  Grid3D(Dims3 dims, int channels, T fill = T(0)) : dims_(dims), channels_(channels) {
    if (dims.nx < 2 || dims.ny < 2 || dims.nz < 2)
      throw config_error("grid needs at least 2 nodes per axis, got " + to_string(dims));
    if (channels < 1) throw config_error("grid needs at least one channel");
    values_.assign(dims.voxels() * static_cast<std::size_t>(channels), fill);
  }

  Dims3 dims() const { return dims_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  std::size_t offset(int x, int y, int z) const {
    return ((static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x) * channels_;
  }
  T& at(int x, int y, int z, int c) { return values_[offset(x, y, z) + c]; }
  const T& at(int x, int y, int z, int c) const { return values_[offset(x, y, z) + c]; }

  bool same_shape(const Grid3D& o) const { return dims_ == o.dims_ && channels_ == o.channels_; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <class U>
  Grid3D<U> cast() const {
    Grid3D<U> out(dims_, channels_);
    std::transform(values_.begin(), values_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Grid3D&, const Grid3D&) = default;

 private:
  Dims3 dims_{};
  int channels_ = 0;
  std::vector<T> values_;
};

/// Row-major (point, channel) feature matrix.
template <class T>
struct FeatureBatch {
  int width = 0;
  std::vector<T> values;

  FeatureBatch() = default;
  FeatureBatch(std::size_t points, int w) : width(w), values(points * static_cast<std::size_t>(w)) {}

  std::size_t points() const { return width == 0 ? 0 : values.size() / static_cast<std::size_t>(width); }
  std::span<T> row(std::size_t i) { return {values.data() + i * width, static_cast<std::size_t>(width)}; }
  std::span<const T> row(std::size_t i) const {
    return {values.data() + i * width, static_cast<std::size_t>(width)};
  }
};

/// The eight corners touched by one trilinear lookup. Corner k takes the
/// upper node along x when bit 0 is set, along y for bit 1, along z for bit 2.
template <class T>
struct Stencil {
  std::array<std::size_t, 8> offset{};
  std::array<T, 8> weight{};
  Vec3<T> frac{};        // position inside the cell
  Vec3<T> scale{};       // d(cell coordinate)/d(point coordinate), 0 when clamped
};

template <class T>
T clamp01(T v) {
  return std::clamp(v, T(0), T(1));
}

template <class T>
Stencil<T> trilinear_stencil(Dims3 dims, int channels, Vec3<T> p) {
  Stencil<T> s;
  const int n[3] = {dims.nx, dims.ny, dims.nz};
  int base[3];
  for (int a = 0; a < 3; ++a) {
    const T v = p[a];
    const bool inside = v > T(0) && v < T(1);
    const T u = clamp01(v) * static_cast<T>(n[a] - 1);
    int i = static_cast<int>(std::floor(u));
    i = std::clamp(i, 0, n[a] - 2);
    base[a] = i;
    s.frac[a] = u - static_cast<T>(i);
    s.scale[a] = inside ? static_cast<T>(n[a] - 1) : T(0);
  }
  const std::size_t sx = static_cast<std::size_t>(channels);
  const std::size_t sy = sx * dims.nx;
  const std::size_t sz = sy * dims.ny;
  const std::size_t o = base[2] * sz + base[1] * sy + base[0] * sx;
  const T wx[2] = {T(1) - s.frac.x, s.frac.x};
  const T wy[2] = {T(1) - s.frac.y, s.frac.y};
  const T wz[2] = {T(1) - s.frac.z, s.frac.z};
  for (int k = 0; k < 8; ++k) {
    const int bx = k & 1, by = (k >> 1) & 1, bz = (k >> 2) & 1;
    s.offset[k] = o + bz * sz + by * sy + bx * sx;
    s.weight[k] = wz[bz] * wy[by] * wx[bx];
  }
  return s;
}

/// out[c] = sum_k weight_k * grid[offset_k + c]
template <class T>
void gather(const T* grid, int channels, const Stencil<T>& s, T* out) {
  for (int c = 0; c < channels; ++c) out[c] = T(0);
  for (int k = 0; k < 8; ++k) {
    const T w = s.weight[k];
    const T* v = grid + s.offset[k];
    for (int c = 0; c < channels; ++c) out[c] += w * v[c];
  }
}

/// grad[offset_k + c] += weight_k * dout[c]
template <class T>
void scatter(T* grad, int channels, const Stencil<T>& s, const T* dout) {
  for (int k = 0; k < 8; ++k) {
    const T w = s.weight[k];
    T* g = grad + s.offset[k];
    for (int c = 0; c < channels; ++c) g[c] += w * dout[c];
  }
}

/// d(sum_c dout[c] * feature[c]) / d(point), through the clamp.
template <class T>
Vec3<T> coord_gradient(const T* grid, int channels, const Stencil<T>& s, const T* dout) {
  const T wx[2] = {T(1) - s.frac.x, s.frac.x};
  const T wy[2] = {T(1) - s.frac.y, s.frac.y};
  const T wz[2] = {T(1) - s.frac.z, s.frac.z};
  const T sign[2] = {T(-1), T(1)};
  Vec3<T> g{};
  for (int k = 0; k < 8; ++k) {
    const int bx = k & 1, by = (k >> 1) & 1, bz = (k >> 2) & 1;
    T proj = 0;
    const T* v = grid + s.offset[k];
    for (int c = 0; c < channels; ++c) proj += v[c] * dout[c];
    g.x += sign[bx] * wy[by] * wz[bz] * proj;
    g.y += wx[bx] * sign[by] * wz[bz] * proj;
    g.z += wx[bx] * wy[by] * sign[bz] * proj;
  }
  return {g.x * s.scale.x, g.y * s.scale.y, g.z * s.scale.z};
}

template <class T>
FeatureBatch<T> trilinear_sample(const Grid3D<T>& grid, std::span<const Vec3<T>> pts) {
  FeatureBatch<T> out(pts.size(), grid.channels());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto s = trilinear_stencil(grid.dims(), grid.channels(), pts[i]);
    gather(grid.data(), grid.channels(), s, out.row(i).data());
  }
  return out;
}

template <class T>
FeatureBatch<T> trilinear_sample(const Grid3D<T>& grid, std::span<const Vec3<T>> pts, int expected_width) {
  if (grid.channels() != expected_width)
    throw config_error("grid has " + std::to_string(grid.channels()) + " channels, expected " +
                       std::to_string(expected_width));
  return trilinear_sample(grid, pts);
}

/// Backward of trilinear_sample. Accumulates into `dgrid` (same shape as
/// `grid`) and, when given, writes per-point coordinate gradients.
template <class T>
void trilinear_backward(const Grid3D<T>& grid, std::span<const Vec3<T>> pts, const FeatureBatch<T>& dfeat,
                        Grid3D<T>& dgrid, std::vector<Vec3<T>>* dcoords = nullptr) {
  if (!grid.same_shape(dgrid)) throw config_error("gradient grid shape differs from grid");
  if (dfeat.width != grid.channels() || dfeat.points() != pts.size())
    throw config_error("feature gradient does not match grid channels / point count");
  if (dcoords) dcoords->assign(pts.size(), Vec3<T>{});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto s = trilinear_stencil(grid.dims(), grid.channels(), pts[i]);
    scatter(dgrid.data(), grid.channels(), s, dfeat.row(i).data());
    if (dcoords) (*dcoords)[i] = coord_gradient(grid.data(), grid.channels(), s, dfeat.row(i).data());
  }
}

/// Periodic coordinate wrap frac(x * frequency) for x in [0, 1].
template <class T>
T sawtooth(T x, int frequency) {
  const T v = clamp01(x) * static_cast<T>(frequency);
  const T r = v - std::floor(v);
  return r >= T(1) ? T(0) : r;
}

template <class T>
Vec3<T> sawtooth(Vec3<T> p, int frequency) {
  return {sawtooth(p.x, frequency), sawtooth(p.y, frequency), sawtooth(p.z, frequency)};
}

template <class T>
std::vector<Vec3<T>> sawtooth_map(std::span<const Vec3<T>> pts, int frequency) {
  if (frequency < 1) throw config_error("sawtooth frequency must be >= 1");
  std::vector<Vec3<T>> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = sawtooth(pts[i], frequency);
  return out;
}

template <class T>
struct BasisLevel {
  Grid3D<T> grid;
  int frequency = 1;

  friend bool operator==(const BasisLevel&, const BasisLevel&) = default;
};

/// Multi-scale basis grids, each indexed through its own sawtooth wrap.
template <class T>
class BasisPyramid {
 public:
  BasisPyramid() = default;
  explicit BasisPyramid(std::vector<BasisLevel<T>> levels) : levels_(std::move(levels)) { validate(); }

  void validate() const {
    if (levels_.empty()) throw config_error("basis pyramid needs at least one level");
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      if (levels_[l].frequency < 1) throw config_error("basis frequency must be >= 1");
      if (l > 0 && levels_[l].frequency <= levels_[l - 1].frequency)
        throw config_error("basis frequencies must be strictly increasing");
    }
  }

  std::size_t size() const { return levels_.size(); }
  BasisLevel<T>& operator[](std::size_t l) { return levels_[l]; }
  const BasisLevel<T>& operator[](std::size_t l) const { return levels_[l]; }
  std::vector<BasisLevel<T>>& levels() { return levels_; }
  const std::vector<BasisLevel<T>>& levels() const { return levels_; }

  int total_channels() const {
    int c = 0;
    for (const auto& l : levels_) c += l.grid.channels();
    return c;
  }
  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& l : levels_) n += l.grid.size();
    return n;
  }

  friend bool operator==(const BasisPyramid&, const BasisPyramid&) = default;

 private:
  std::vector<BasisLevel<T>> levels_;
};

/// Additive per-frame update of a basis pyramid; one grid per basis level.
template <class T>
struct ResidualPyramid {
  std::vector<Grid3D<T>> levels;

  static ResidualPyramid zeros_like(const BasisPyramid<T>& b) {
    ResidualPyramid r;
    for (const auto& l : b.levels()) r.levels.emplace_back(l.grid.dims(), l.grid.channels());
    return r;
  }
  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& g : levels) n += g.size();
    return n;
  }
  friend bool operator==(const ResidualPyramid&, const ResidualPyramid&) = default;
};

template <class T>
bool congruent(const BasisPyramid<T>& b, const ResidualPyramid<T>& r) {
  if (b.size() != r.levels.size()) return false;
  for (std::size_t l = 0; l < b.size(); ++l)
    if (!b[l].grid.same_shape(r.levels[l])) return false;
  return true;
}

/// Level-by-level sampling through the sawtooth wrap, concatenated in level order.
template <class T>
FeatureBatch<T> basis_sample(const BasisPyramid<T>& basis, std::span<const Vec3<T>> pts) {
  FeatureBatch<T> out(pts.size(), basis.total_channels());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    T* dst = out.row(i).data();
    for (const auto& level : basis.levels()) {
      const auto s = trilinear_stencil(level.grid.dims(), level.grid.channels(), sawtooth(pts[i], level.frequency));
      gather(level.grid.data(), level.grid.channels(), s, dst);
      dst += level.grid.channels();
    }
  }
  return out;
}

/// Backward of basis_sample. `dlevels` holds one gradient grid per level.
/// Coordinate gradients pass through the sawtooth with slope = frequency.
template <class T>
void basis_backward(const BasisPyramid<T>& basis, std::span<const Vec3<T>> pts, const FeatureBatch<T>& dfeat,
                    std::vector<Grid3D<T>>& dlevels, std::vector<Vec3<T>>* dcoords = nullptr) {
  if (dlevels.size() != basis.size()) throw config_error("gradient level count differs from basis");
  if (dfeat.width != basis.total_channels() || dfeat.points() != pts.size())
    throw config_error("feature gradient does not match basis channels / point count");
  if (dcoords) dcoords->assign(pts.size(), Vec3<T>{});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const T* src = dfeat.row(i).data();
    for (std::size_t l = 0; l < basis.size(); ++l) {
      const auto& level = basis[l];
      const auto s = trilinear_stencil(level.grid.dims(), level.grid.channels(), sawtooth(pts[i], level.frequency));
      scatter(dlevels[l].data(), level.grid.channels(), s, src);
      if (dcoords) {
        auto g = coord_gradient(level.grid.data(), level.grid.channels(), s, src);
        const T f = static_cast<T>(level.frequency);
        for (int a = 0; a < 3; ++a) {
          const T v = pts[i][a];
          (*dcoords)[i][a] += (v > T(0) && v < T(1)) ? g[a] * f : T(0);
        }
      }
      src += level.grid.channels();
    }
  }
}

/// Hadamard product of coefficient and basis features.
template <class T>
FeatureBatch<T> fuse(const FeatureBatch<T>& coef, const FeatureBatch<T>& basis) {
  if (coef.width != basis.width || coef.values.size() != basis.values.size())
    throw config_error("fuse: coefficient width " + std::to_string(coef.width) + " vs basis width " +
                       std::to_string(basis.width));
  FeatureBatch<T> out = coef;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= basis.values[i];
  return out;
}

template <class T>
void fuse_backward(const FeatureBatch<T>& coef, const FeatureBatch<T>& basis, const FeatureBatch<T>& dout,
                   FeatureBatch<T>& dcoef, FeatureBatch<T>& dbasis) {
  if (coef.width != basis.width || coef.values.size() != basis.values.size() ||
      dout.values.size() != coef.values.size())
    throw config_error("fuse_backward: width mismatch");
  dcoef = FeatureBatch<T>(coef.points(), coef.width);
  dbasis = FeatureBatch<T>(coef.points(), coef.width);
  for (std::size_t i = 0; i < dout.values.size(); ++i) {
    dcoef.values[i] = dout.values[i] * basis.values[i];
    dbasis.values[i] = dout.values[i] * coef.values[i];
  }
}

/// B_t = B_{t-1} + R_t, level by level. Inputs are left untouched.
template <class T>
BasisPyramid<T> apply_residual(const BasisPyramid<T>& prev, const ResidualPyramid<T>& res) {
  if (!congruent(prev, res)) throw config_error("residual pyramid is not congruent with basis");
  BasisPyramid<T> out = prev;
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto dst = out[l].grid.values();
    auto src = res.levels[l].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

template <class T>
struct L1Result {
  T value = 0;
  ResidualPyramid<T> gradient;
};

/// Sum of |r| over every residual entry with subgradient sign(r), 0 at 0.
template <class T>
L1Result<T> l1_penalty(const ResidualPyramid<T>& res) {
  L1Result<T> out;
  out.gradient.levels.reserve(res.levels.size());
  double total = 0;
  for (const auto& g : res.levels) {
    Grid3D<T> sg(g.dims(), g.channels());
    auto src = g.values();
    auto dst = sg.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
      total += std::abs(static_cast<double>(src[i]));
      dst[i] = src[i] > T(0) ? T(1) : (src[i] < T(0) ? T(-1) : T(0));
    }
    out.gradient.levels.push_back(std::move(sg));
  }
  out.value = static_cast<T>(total);
  return out;
}

}  // namespace nvv
