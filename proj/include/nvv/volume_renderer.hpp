#pragma once

// Pinhole cameras, ray generation against the unit cube, sample placement,
// alpha compositing with its backward pass, images and PSNR.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/math.hpp"

namespace nvv {

/// Pinhole camera, OpenCV convention: +z looks forward, +y points down the
/// image. `rotation` is world-from-camera, row-major.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3<double> position{};

  Vec3<double> to_world(Vec3<double> d) const {
    const auto& r = rotation;
    return {r[0] * d.x + r[1] * d.y + r[2] * d.z, r[3] * d.x + r[4] * d.y + r[5] * d.z,
            r[6] * d.x + r[7] * d.y + r[8] * d.z};
  }

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw config_error("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw config_error("camera image size must be positive");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += rotation[k * 3 + i] * rotation[k * 3 + j];
        if (std::abs(s - (i == j ? 1.0 : 0.0)) > 1e-6) throw config_error("camera rotation is not orthonormal");
      }
  }

  friend bool operator==(const Camera&, const Camera&) = default;
};

/// Camera at `eye` looking at `target`; `up` gives the world direction that
/// appears upward in the image.
inline Camera look_at(Vec3<double> eye, Vec3<double> target, Vec3<double> up, int width, int height,
                      double fov_y_degrees) {
  const auto fwd = normalized(target - eye);
  auto right = cross(fwd, up);
  if (norm(right) < 1e-9) right = cross(fwd, Vec3<double>{1, 0, 0});
  right = normalized(right);
  const auto down = cross(fwd, right);
  Camera c;
  c.width = width;
  c.height = height;
  c.fy = 0.5 * height / std::tan(0.5 * fov_y_degrees * std::acos(-1.0) / 180.0);
  c.fx = c.fy;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.rotation = {right.x, down.x, fwd.x, right.y, down.y, fwd.y, right.z, down.z, fwd.z};
  c.position = eye;
  return c;
}

struct RayBatch {
  std::vector<Vec3<double>> origins;
  std::vector<Vec3<double>> directions;
  std::vector<std::uint32_t> pixels;  // y * width + x
  std::vector<double> near, far;

  std::size_t size() const { return origins.size(); }
  void reserve(std::size_t n) {
    origins.reserve(n);
    directions.reserve(n);
    pixels.reserve(n);
    near.reserve(n);
    far.reserve(n);
  }
};

/// Slab test against the unit cube. Returns false on a miss.
inline bool intersect_unit_cube(Vec3<double> o, Vec3<double> d, double& t0, double& t1) {
  t0 = 0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0) {
      if (o[a] < 0 || o[a] > 1) return false;
      continue;
    }
    const double inv = 1.0 / d[a];
    double ta = (0 - o[a]) * inv, tb = (1 - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

/// Rays through pixel centers; rays missing the cube are dropped.
inline RayBatch generate_rays(const Camera& cam, std::span<const std::uint32_t> pixels) {
  RayBatch rays;
  rays.reserve(pixels.size());
  const std::uint32_t count = static_cast<std::uint32_t>(cam.width) * static_cast<std::uint32_t>(cam.height);
  for (std::uint32_t p : pixels) {
    if (p >= count) throw contract_error("pixel index out of image bounds");
    const double u = static_cast<double>(p % cam.width) + 0.5;
    const double v = static_cast<double>(p / cam.width) + 0.5;
    const auto d = normalized(cam.to_world({(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0}));
    double t0, t1;
    if (!intersect_unit_cube(cam.position, d, t0, t1)) continue;
    rays.origins.push_back(cam.position);
    rays.directions.push_back(d);
    rays.pixels.push_back(p);
    rays.near.push_back(t0);
    rays.far.push_back(t1);
  }
  return rays;
}

inline RayBatch generate_rays(const Camera& cam) {
  std::vector<std::uint32_t> all(static_cast<std::size_t>(cam.width) * cam.height);
  for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  return generate_rays(cam, all);
}

/// n ordered samples per ray, ray-major.
template <class T>
struct SampleBatch {
  int per_ray = 0;
  std::vector<T> t;
  std::vector<T> delta;
  std::vector<Vec3<T>> points;

  std::size_t rays() const { return per_ray == 0 ? 0 : t.size() / per_ray; }
};

/// Fills samples for one ray into the given slots. Midpoints of n equal bins
/// when `jitter` is empty, otherwise bin i uses offset jitter[i] in [0, 1).
template <class T>
void place_samples(Vec3<double> o, Vec3<double> d, double near, double far, int n, const double* jitter, T* t,
                   T* delta, Vec3<T>* pts) {
  const double step = (far - near) / n;
  double prev = 0;
  for (int i = 0; i < n; ++i) {
    const double ti = near + (i + (jitter ? jitter[i] : 0.5)) * step;
    t[i] = static_cast<T>(ti);
    pts[i] = (o + d * ti).cast<T>();
    if (i > 0) delta[i - 1] = static_cast<T>(ti - prev);
    prev = ti;
  }
  delta[n - 1] = static_cast<T>(far - prev);
}

template <class T>
SampleBatch<T> sample_points(const RayBatch& rays, int n, bool stratified, Rng* rng = nullptr) {
  if (n < 1) throw config_error("need at least one sample per ray");
  if (stratified && !rng) throw config_error("stratified sampling needs a random generator");
  SampleBatch<T> s;
  s.per_ray = n;
  s.t.resize(rays.size() * n);
  s.delta.resize(rays.size() * n);
  s.points.resize(rays.size() * n);
  std::vector<double> jitter(n);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (stratified)
      for (auto& j : jitter) j = uniform01(*rng);
    place_samples(rays.origins[r], rays.directions[r], rays.near[r], rays.far[r], n,
                  stratified ? jitter.data() : nullptr, s.t.data() + r * n, s.delta.data() + r * n,
                  s.points.data() + r * n);
  }
  return s;
}

template <class T>
struct CompositeResult {
  Vec3<T> rgb{};
  std::vector<T> weights;
  T transmittance = 1;  // left over after the last sample
};

/// C = sum_i T_i a_i c_i + T_{N+1} bg, a_i = 1 - exp(-sigma_i delta_i),
/// T_i = prod_{j<i} (1 - a_j).
template <class T>
CompositeResult<T> composite(std::span<const Vec3<T>> colors, std::span<const T> sigmas, std::span<const T> deltas,
                             Vec3<T> background) {
  if (colors.size() != sigmas.size() || sigmas.size() != deltas.size())
    throw contract_error("composite: colors, sigmas and deltas differ in length");
  CompositeResult<T> out;
  out.weights.resize(sigmas.size());
  T trans = 1;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (sigmas[i] < T(0) || deltas[i] < T(0)) throw contract_error("composite: negative density or spacing");
    const T keep = std::exp(-sigmas[i] * deltas[i]);
    const T w = trans * -std::expm1(-sigmas[i] * deltas[i]);
    out.weights[i] = w;
    out.rgb = out.rgb + colors[i] * w;
    trans *= keep;
  }
  out.transmittance = trans;
  out.rgb = out.rgb + background * trans;
  return out;
}

/// Backward of composite for d(loss)/d(pixel) = `dpixel`.
/// d/dc_i = w_i; d/dsigma_i = delta_i (T_{i+1} c_i - S_i) . dpixel, with S_i
/// the radiance composited behind sample i (including background).
template <class T>
void composite_backward(std::span<const Vec3<T>> colors, std::span<const T> sigmas, std::span<const T> deltas,
                        Vec3<T> background, Vec3<T> dpixel, std::span<Vec3<T>> dcolors, std::span<T> dsigmas) {
  const std::size_t n = sigmas.size();
  if (colors.size() != n || deltas.size() != n || dcolors.size() != n || dsigmas.size() != n)
    throw contract_error("composite_backward: length mismatch");
  // Forward pass again: transmittance after each sample.
  T trans = 1;
  T after[512];
  std::vector<T> after_heap;
  T* next = after;
  if (n > 512) {
    after_heap.resize(n);
    next = after_heap.data();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmas[i] < T(0) || deltas[i] < T(0)) throw contract_error("composite: negative density or spacing");
    const T keep = std::exp(-sigmas[i] * deltas[i]);
    dcolors[i] = dpixel * (trans * -std::expm1(-sigmas[i] * deltas[i]));
    trans *= keep;
    next[i] = trans;
  }
  T behind = dot(background, dpixel) * trans;  // S_i . dpixel, built back to front
  for (std::size_t i = n; i-- > 0;) {
    const T ci = dot(colors[i], dpixel);
    dsigmas[i] = deltas[i] * (next[i] * ci - behind);
    const T before = i == 0 ? T(1) : next[i - 1];
    behind += (before - next[i]) * ci;
  }
}

/// W x H x 3 image, row-major, values in [0, 1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, Vec3<float> fill = {}) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = fill.x;
      rgb[i + 1] = fill.y;
      rgb[i + 2] = fill.z;
    }
  }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  Vec3<float> pixel(std::size_t p) const { return {rgb[3 * p], rgb[3 * p + 1], rgb[3 * p + 2]}; }
  void set_pixel(std::size_t p, Vec3<float> c) {
    rgb[3 * p] = c.x;
    rgb[3 * p + 1] = c.y;
    rgb[3 * p + 2] = c.z;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw contract_error("image dimensions differ");
  double s = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    s += d * d;
  }
  return a.rgb.empty() ? 0.0 : s / static_cast<double>(a.rgb.size());
}

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double m) { return m < 1e-10 ? kPsnrCap : 10.0 * std::log10(1.0 / m); }

/// Peak 1.0; capped at 99 dB for near-identical images.
inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

inline std::uint8_t to_byte(float v) {
  const double s = std::round(255.0 * static_cast<double>(v));
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

/// Binary P6, maxval 255.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string() + " for writing");
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.rgb.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(to_byte(img.rgb[i]));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string());
  auto token = [&]() {
    std::string s;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!s.empty()) break;
        continue;
      }
      s.push_back(c);
    }
    return s;
  };
  if (token() != "P6") throw format_error(path.string() + ": not a binary PPM (P6)");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval != 255) throw format_error(path.string() + ": unsupported PPM header");
  Image img(w, h);
  std::vector<unsigned char> bytes(img.rgb.size());
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw format_error(path.string() + ": truncated");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = static_cast<float>(bytes[i] / 255.0);
  return img;
}

}  // namespace nvv
