#pragma once

// Tiny MLP mapping fused grid features plus an encoded view direction to
// color and density, with hand-written batched forward/backward passes.
//
// Batched activations are feature-major: row k of a layer holds feature k
// for every point in the batch. Each output value is accumulated over its
// inputs in a fixed order, so a point's result does not depend on how many
// other points share its batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/grid_field.hpp"
#include "nvv/log.hpp"
#include "nvv/math.hpp"

namespace nvv {

inline constexpr int kRadianceOutputs = 4;  // 3 color + 1 density pre-activation

inline int direction_encoding_width(int octaves) { return 3 + 6 * octaves; }

/// (d, sin(2^0 d), cos(2^0 d), ..., sin(2^{L-1} d), cos(2^{L-1} d)).
/// Non-unit directions are normalized with a warning.
template <class T>
std::vector<T> encode_direction(Vec3<T> d, int octaves) {
  if (octaves < 0) throw config_error("direction octaves must be >= 0");
  const T len = norm(d);
  if (std::abs(len - T(1)) > T(1e-6)) {
    if (!(len > T(0))) throw contract_error("cannot encode a zero-length direction");
    warn("encode_direction: non-unit direction normalized");
    d = d * (T(1) / len);
  }
  std::vector<T> out;
  out.reserve(direction_encoding_width(octaves));
  out.insert(out.end(), {d.x, d.y, d.z});
  T freq = 1;
  for (int l = 0; l < octaves; ++l, freq *= 2) {
    for (int a = 0; a < 3; ++a) out.push_back(std::sin(freq * d[a]));
    for (int a = 0; a < 3; ++a) out.push_back(std::cos(freq * d[a]));
  }
  return out;
}

struct MlpShape {
  int input = 0;
  std::vector<int> hidden;
  int output = kRadianceOutputs;

  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  int in_width(int l) const { return l == 0 ? input : hidden[l - 1]; }
  int out_width(int l) const { return l == layers() - 1 ? output : hidden[l]; }

  std::size_t weight_offset(int l) const {
    std::size_t o = 0;
    for (int i = 0; i < l; ++i) o += static_cast<std::size_t>(in_width(i) + 1) * out_width(i);
    return o;
  }
  std::size_t bias_offset(int l) const {
    return weight_offset(l) + static_cast<std::size_t>(in_width(l)) * out_width(l);
  }
  std::size_t parameter_count() const { return weight_offset(layers()); }

  void validate() const {
    if (input < 1 || output < 1) throw config_error("MLP widths must be positive");
    for (int h : hidden)
      if (h < 1) throw config_error("MLP hidden widths must be positive");
  }
  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Parameters live in one flat buffer: per layer, an out x in row-major
/// weight matrix followed by its bias vector.
template <class T>
class TinyMlp {
 public:
  TinyMlp() = default;
  explicit TinyMlp(MlpShape shape) : shape_(std::move(shape)) {
    shape_.validate();
    params_.assign(shape_.parameter_count(), T(0));
  }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static TinyMlp glorot(MlpShape shape, Rng& rng) {
    TinyMlp m(std::move(shape));
    for (int l = 0; l < m.shape_.layers(); ++l) {
      const double a = std::sqrt(6.0 / (m.shape_.in_width(l) + m.shape_.out_width(l)));
      for (T& w : m.weight(l)) w = static_cast<T>((2.0 * uniform01(rng) - 1.0) * a);
    }
    return m;
  }

  const MlpShape& shape() const { return shape_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  std::span<T> weight(int l) {
    return {params_.data() + shape_.weight_offset(l),
            static_cast<std::size_t>(shape_.in_width(l)) * shape_.out_width(l)};
  }
  std::span<const T> weight(int l) const {
    return {params_.data() + shape_.weight_offset(l),
            static_cast<std::size_t>(shape_.in_width(l)) * shape_.out_width(l)};
  }
  std::span<T> bias(int l) {
    return {params_.data() + shape_.bias_offset(l), static_cast<std::size_t>(shape_.out_width(l))};
  }
  std::span<const T> bias(int l) const {
    return {params_.data() + shape_.bias_offset(l), static_cast<std::size_t>(shape_.out_width(l))};
  }

  template <class U>
  TinyMlp<U> cast() const {
    TinyMlp<U> out(shape_);
    std::transform(params_.begin(), params_.end(), out.params().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const TinyMlp&, const TinyMlp&) = default;

 private:
  MlpShape shape_;
  std::vector<T> params_;
};

template <class T>
struct PointRadiance {
  Vec3<T> rgb{};
  T sigma = 0;
};

/// Feature-major activations for one batch. act[0] is the input (filled by
/// the caller), act[l] for 0 < l < layers the rectified hidden outputs, and
/// act[layers] the raw output pre-activations.
template <class T>
struct MlpWorkspace {
  std::size_t count = 0;
  std::vector<std::vector<T>> act;

  void resize(const MlpShape& s, std::size_t n) {
    count = n;
    act.resize(s.layers() + 1);
    for (int l = 0; l <= s.layers(); ++l) {
      const int w = l == 0 ? s.input : s.out_width(l - 1);
      act[l].resize(static_cast<std::size_t>(w) * n);
    }
  }
  T* input() { return act[0].data(); }
  const T* output() const { return act.back().data(); }
};

namespace detail {

inline constexpr std::size_t kColumnBlock = 64;

// Full column blocks take the fixed-length path so the inner loops
// vectorize; `Len` is either std::size_t or an integral_constant.
template <class F>
void for_column_blocks(std::size_t n, F&& body) {
  std::size_t m0 = 0;
  for (; m0 + kColumnBlock <= n; m0 += kColumnBlock) body(m0, std::integral_constant<std::size_t, kColumnBlock>{});
  if (m0 < n) body(m0, n - m0);
}

/// Y[j][m] = b[j] + sum_k W[j][k] X[k][m], optionally rectified. Four output
/// rows share each pass over X; every entry still sums over k in order.
template <class T>
void dense_forward(const T* w, const T* b, const T* x, T* y, int in, int out, std::size_t n, bool relu) {
  for_column_blocks(n, [&](std::size_t m0, auto len) {
    const std::size_t bm = len;
    auto store = [&](int j, const T* acc) {
      T* yj = y + static_cast<std::size_t>(j) * n + m0;
      if (relu) {
        for (std::size_t m = 0; m < bm; ++m) yj[m] = acc[m] > T(0) ? acc[m] : T(0);
      } else {
        for (std::size_t m = 0; m < bm; ++m) yj[m] = acc[m];
      }
    };
    int j = 0;
    for (; j + 4 <= out; j += 4) {
      T a0[kColumnBlock], a1[kColumnBlock], a2[kColumnBlock], a3[kColumnBlock];
      for (std::size_t m = 0; m < bm; ++m) {
        a0[m] = b[j];
        a1[m] = b[j + 1];
        a2[m] = b[j + 2];
        a3[m] = b[j + 3];
      }
      const T* w0 = w + static_cast<std::size_t>(j) * in;
      const T* w1 = w0 + in;
      const T* w2 = w1 + in;
      const T* w3 = w2 + in;
      for (int k = 0; k < in; ++k) {
        const T c0 = w0[k], c1 = w1[k], c2 = w2[k], c3 = w3[k];
        const T* xk = x + static_cast<std::size_t>(k) * n + m0;
        for (std::size_t m = 0; m < bm; ++m) {
          const T v = xk[m];
          a0[m] += c0 * v;
          a1[m] += c1 * v;
          a2[m] += c2 * v;
          a3[m] += c3 * v;
        }
      }
      store(j, a0);
      store(j + 1, a1);
      store(j + 2, a2);
      store(j + 3, a3);
    }
    for (; j < out; ++j) {
      T acc[kColumnBlock];
      for (std::size_t m = 0; m < bm; ++m) acc[m] = b[j];
      const T* wj = w + static_cast<std::size_t>(j) * in;
      for (int k = 0; k < in; ++k) {
        const T wk = wj[k];
        const T* xk = x + static_cast<std::size_t>(k) * n + m0;
        for (std::size_t m = 0; m < bm; ++m) acc[m] += wk * xk[m];
      }
      store(j, acc);
    }
  });
}

/// DX[k][m] = sum_j W[j][k] DY[j][m] for the first `rows` inputs.
template <class T>
void dense_input_grad(const T* w, const T* dy, T* dx, int in, int out, int rows, std::size_t n) {
  for_column_blocks(n, [&](std::size_t m0, auto len) {
    const std::size_t bm = len;
    int k = 0;
    for (; k + 4 <= rows; k += 4) {
      T a0[kColumnBlock] = {}, a1[kColumnBlock] = {}, a2[kColumnBlock] = {}, a3[kColumnBlock] = {};
      for (int j = 0; j < out; ++j) {
        const T* wj = w + static_cast<std::size_t>(j) * in + k;
        const T c0 = wj[0], c1 = wj[1], c2 = wj[2], c3 = wj[3];
        const T* dyj = dy + static_cast<std::size_t>(j) * n + m0;
        for (std::size_t m = 0; m < bm; ++m) {
          const T v = dyj[m];
          a0[m] += c0 * v;
          a1[m] += c1 * v;
          a2[m] += c2 * v;
          a3[m] += c3 * v;
        }
      }
      T* d0 = dx + static_cast<std::size_t>(k) * n + m0;
      for (std::size_t m = 0; m < bm; ++m) {
        d0[m] = a0[m];
        d0[n + m] = a1[m];
        d0[2 * n + m] = a2[m];
        d0[3 * n + m] = a3[m];
      }
    }
    for (; k < rows; ++k) {
      T acc[kColumnBlock] = {};
      for (int j = 0; j < out; ++j) {
        const T wjk = w[static_cast<std::size_t>(j) * in + k];
        const T* dyj = dy + static_cast<std::size_t>(j) * n + m0;
        for (std::size_t m = 0; m < bm; ++m) acc[m] += wjk * dyj[m];
      }
      T* dxk = dx + static_cast<std::size_t>(k) * n + m0;
      for (std::size_t m = 0; m < bm; ++m) dxk[m] = acc[m];
    }
  });
}

/// Lane-split dot product; the fixed lane layout keeps the sum order stable.
template <class T>
T dot_lanes(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t L = 16;
  T lanes[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L)
    for (std::size_t l = 0; l < L; ++l) lanes[l] += a[i + l] * b[i + l];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += lanes[l];
  return s + tail;
}

template <class T>
T sum_lanes(const T* a, std::size_t n) {
  constexpr std::size_t L = 16;
  T lanes[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L)
    for (std::size_t l = 0; l < L; ++l) lanes[l] += a[i + l];
  T tail = 0;
  for (; i < n; ++i) tail += a[i];
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += lanes[l];
  return s + tail;
}

}  // namespace detail

template <class T>
void mlp_forward(const TinyMlp<T>& mlp, MlpWorkspace<T>& ws) {
  const auto& s = mlp.shape();
  for (int l = 0; l < s.layers(); ++l) {
    detail::dense_forward(mlp.weight(l).data(), mlp.bias(l).data(), ws.act[l].data(), ws.act[l + 1].data(),
                          s.in_width(l), s.out_width(l), ws.count, l + 1 < s.layers());
  }
}

/// Backward through the whole MLP. `dout` holds d(loss)/d(raw outputs) in
/// feature-major layout and is used as scratch. Parameter gradients are
/// added to `grad_params` (skipped when it is empty); d(loss)/d(input rows
/// [0, input_rows)) is written
/// to `dinput` when input_rows > 0.
template <class T>
void mlp_backward(const TinyMlp<T>& mlp, const MlpWorkspace<T>& ws, std::vector<T>& dout, std::span<T> grad_params,
                  T* dinput, int input_rows) {
  const auto& s = mlp.shape();
  const std::size_t n = ws.count;
  std::vector<T> dcur = std::move(dout);
  std::vector<T> dprev;
  for (int l = s.layers() - 1; l >= 0; --l) {
    const int in = s.in_width(l), out = s.out_width(l);
    const T* x = ws.act[l].data();
    if (!grad_params.empty()) {
      T* gw = grad_params.data() + s.weight_offset(l);
      T* gb = grad_params.data() + s.bias_offset(l);
      for (int j = 0; j < out; ++j) {
        const T* dy = dcur.data() + static_cast<std::size_t>(j) * n;
        gb[j] += detail::sum_lanes(dy, n);
        for (int k = 0; k < in; ++k)
          gw[static_cast<std::size_t>(j) * in + k] += detail::dot_lanes(dy, x + k * n, n);
      }
    }
    if (l > 0) {
      dprev.resize(static_cast<std::size_t>(in) * n);
      detail::dense_input_grad(mlp.weight(l).data(), dcur.data(), dprev.data(), in, out, in, n);
      for (std::size_t i = 0; i < dprev.size(); ++i)
        if (!(x[i] > T(0))) dprev[i] = T(0);
      std::swap(dcur, dprev);
    } else if (input_rows > 0) {
      detail::dense_input_grad(mlp.weight(0).data(), dcur.data(), dinput, in, out, input_rows, n);
    }
  }
  dout = std::move(dcur);
}

/// Color/density heads on raw outputs: sigmoid for rgb, softplus for sigma.
template <class T>
PointRadiance<T> radiance_head(const T* raw, std::size_t stride) {
  return {{sigmoid(raw[0]), sigmoid(raw[stride]), sigmoid(raw[2 * stride])}, softplus(raw[3 * stride])};
}

/// Fills d(raw) from d(rgb), d(sigma) at one column.
template <class T>
void radiance_head_backward(const T* raw, std::size_t stride, const PointRadiance<T>& rad, Vec3<T> drgb, T dsigma,
                            T* draw) {
  for (int c = 0; c < 3; ++c) draw[c * stride] = drgb[c] * rad.rgb[c] * (T(1) - rad.rgb[c]);
  draw[3 * stride] = dsigma * sigmoid(raw[3 * stride]);
}

namespace detail {

template <class T>
void fill_mlp_input(const TinyMlp<T>& mlp, const FeatureBatch<T>& fused, const FeatureBatch<T>& dir_enc,
                    MlpWorkspace<T>& ws) {
  const std::size_t n = fused.points();
  const int fw = fused.width, dw = dir_enc.width;
  if (fw + dw != mlp.shape().input)
    throw config_error("MLP input width " + std::to_string(mlp.shape().input) + " != fused " + std::to_string(fw) +
                       " + direction " + std::to_string(dw));
  const bool broadcast = dir_enc.points() == 1;
  if (!broadcast && dir_enc.points() != n) throw config_error("direction encodings must be one per point or one");
  ws.resize(mlp.shape(), n);
  T* in = ws.input();
  for (std::size_t m = 0; m < n; ++m) {
    for (int k = 0; k < fw; ++k) in[k * n + m] = fused.values[m * fw + k];
    const T* d = dir_enc.values.data() + (broadcast ? 0 : m * dw);
    for (int k = 0; k < dw; ++k) in[(fw + k) * n + m] = d[k];
  }
}

}  // namespace detail

/// Per-point color and density. `dir_enc` holds one encoding per point, or a
/// single row broadcast to every point.
template <class T>
std::vector<PointRadiance<T>> mlp_eval(const TinyMlp<T>& mlp, const FeatureBatch<T>& fused,
                                       const FeatureBatch<T>& dir_enc) {
  MlpWorkspace<T> ws;
  detail::fill_mlp_input(mlp, fused, dir_enc, ws);
  mlp_forward(mlp, ws);
  std::vector<PointRadiance<T>> out(ws.count);
  for (std::size_t m = 0; m < ws.count; ++m) out[m] = radiance_head(ws.output() + m, ws.count);
  return out;
}

/// Backward of mlp_eval: adds parameter gradients into `grad_params` and
/// returns d(loss)/d(fused).
template <class T>
FeatureBatch<T> mlp_eval_backward(const TinyMlp<T>& mlp, const FeatureBatch<T>& fused, const FeatureBatch<T>& dir_enc,
                                  std::span<const Vec3<T>> drgb, std::span<const T> dsigma, std::span<T> grad_params) {
  if (grad_params.size() != mlp.params().size()) throw config_error("gradient buffer size mismatch");
  MlpWorkspace<T> ws;
  detail::fill_mlp_input(mlp, fused, dir_enc, ws);
  mlp_forward(mlp, ws);
  const std::size_t n = ws.count;
  std::vector<T> dout(static_cast<std::size_t>(kRadianceOutputs) * n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto rad = radiance_head(ws.output() + m, n);
    radiance_head_backward(ws.output() + m, n, rad, drgb[m], dsigma[m], dout.data() + m);
  }
  std::vector<T> dinput(static_cast<std::size_t>(fused.width) * n);
  mlp_backward(mlp, ws, dout, grad_params, dinput.data(), fused.width);
  FeatureBatch<T> dfused(n, fused.width);
  for (std::size_t m = 0; m < n; ++m)
    for (int k = 0; k < fused.width; ++k) dfused.values[m * fused.width + k] = dinput[k * n + m];
  return dfused;
}

}  // namespace nvv
