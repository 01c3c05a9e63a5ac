#pragma once

// Analytic dynamic scene of Gaussian density blobs, its ground-truth
// renderer, a camera rig, and the on-disk dataset layout:
//
//   <dir>/manifest.txt                 key=value
//   <dir>/poses.txt                    fx fy cx cy r00 r01 r02 tx r10 .. tz, one view per line
//   <dir>/frame_0000/view_00.ppm ...

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/math.hpp"
#include "nvv/volume_renderer.hpp"

namespace nvv {

struct Blob {
  Vec3<double> center{0.5, 0.5, 0.5};
  Vec3<double> amplitude{};  // sinusoidal motion per axis
  Vec3<double> phase{};
  double omega = 0;          // radians per frame
  double peak = 40;
  double radius = 0.1;
  Vec3<double> color{1, 1, 1};

  Vec3<double> center_at(double t) const {
    return {center.x + amplitude.x * std::sin(omega * t + phase.x),
            center.y + amplitude.y * std::sin(omega * t + phase.y),
            center.z + amplitude.z * std::sin(omega * t + phase.z)};
  }
};

struct BlobScene {
  std::vector<Blob> blobs;
  Vec3<double> background{1, 1, 1};
  int frames = 1;

  void validate() const {
    if (frames < 1) throw config_error("scene needs at least one frame");
    for (const auto& b : blobs) {
      if (!(b.radius > 0)) throw config_error("blob radius must be positive");
      if (b.peak < 0) throw config_error("blob peak density must be >= 0");
      for (int a = 0; a < 3; ++a)
        if (b.center[a] - std::abs(b.amplitude[a]) < 0 || b.center[a] + std::abs(b.amplitude[a]) > 1)
          throw config_error("blob path leaves the unit cube");
    }
  }
};

/// Three colored blobs drifting slowly (at most ~0.02 units per frame).
inline BlobScene acceptance_scene(int frames = 40) {
  BlobScene s;
  s.frames = frames;
  s.blobs = {
      {{0.38, 0.45, 0.50}, {0.10, 0.05, 0.00}, {0.0, 1.0, 0.0}, 0.12, 30, 0.13, {0.90, 0.20, 0.15}},
      {{0.62, 0.55, 0.45}, {0.00, 0.08, 0.08}, {0.0, 0.0, 1.5}, 0.15, 25, 0.11, {0.15, 0.70, 0.25}},
      {{0.50, 0.62, 0.62}, {0.07, 0.00, 0.06}, {0.7, 0.0, 2.2}, 0.10, 35, 0.09, {0.20, 0.30, 0.90}},
  };
  return s;
}

struct OracleSample {
  Vec3<double> rgb;
  double sigma = 0;
};

inline OracleSample oracle_field(const BlobScene& scene, Vec3<double> x, double t) {
  OracleSample out;
  Vec3<double> acc{};
  for (const auto& b : scene.blobs) {
    const auto d = x - b.center_at(t);
    const double s = b.peak * std::exp(-dot(d, d) / (2 * b.radius * b.radius));
    out.sigma += s;
    acc = acc + b.color * s;
  }
  out.rgb = out.sigma < 1e-9 ? scene.background : acc * (1.0 / out.sigma);
  return out;
}

/// Ground truth through the model's own compositing, midpoint samples.
inline Image oracle_render(const BlobScene& scene, const Camera& cam, double t, int samples) {
  Image img(cam.width, cam.height, scene.background.cast<float>());
  const RayBatch rays = generate_rays(cam);
  const auto s = sample_points<double>(rays, samples, false);
  std::vector<Vec3<double>> colors(samples);
  std::vector<double> sigmas(samples);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (int i = 0; i < samples; ++i) {
      const auto o = oracle_field(scene, s.points[r * samples + i], t);
      colors[i] = o.rgb;
      sigmas[i] = o.sigma;
    }
    const auto c = composite<double>(colors, sigmas, std::span<const double>(s.delta.data() + r * samples, samples),
                                     scene.background);
    img.set_pixel(rays.pixels[r], c.rgb.cast<float>());
  }
  return img;
}

/// `count` views at distance `radius` from the cube center on two elevation
/// rings. Azimuths are visited in a stride-7 order so that any run of
/// consecutive views (in particular the held-out tail) is spread around.
inline std::vector<Camera> camera_rig(int count, int width, int height, double radius = 2.5,
                                      double fov_y = 40.0) {
  if (count < 1) throw config_error("rig needs at least one view");
  std::vector<Camera> cams;
  const Vec3<double> center{0.5, 0.5, 0.5};
  const double pi = std::acos(-1.0);
  const int stride = std::gcd(7, count) == 1 ? 7 : 1;
  for (int i = 0; i < count; ++i) {
    const int slot = (i * stride) % count;
    const double az = 2 * pi * slot / count;
    const double el = (slot % 2 == 0 ? 15.0 : 45.0) * pi / 180;
    const Vec3<double> eye = center + Vec3<double>{std::cos(el) * std::cos(az), std::sin(el),
                                                   std::cos(el) * std::sin(az)} * radius;
    cams.push_back(look_at(eye, center, {0, 1, 0}, width, height, fov_y));
  }
  return cams;
}

struct DatasetManifest {
  int frames = 0;
  int views = 0;
  int width = 0, height = 0;
  std::vector<int> train_views, test_views;
  Vec3<double> background{1, 1, 1};
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Camera> cameras;
  std::vector<std::vector<Image>> images;  // [frame][view]

  std::vector<Camera> cams(const std::vector<int>& views) const {
    std::vector<Camera> out;
    for (int v : views) out.push_back(cameras[v]);
    return out;
  }
  std::vector<Image> frame_images(int frame, const std::vector<int>& views) const {
    std::vector<Image> out;
    for (int v : views) out.push_back(images[frame][v]);
    return out;
  }
};

namespace detail {

inline std::string frame_dir(int f) {
  std::ostringstream s;
  s << "frame_" << std::setw(4) << std::setfill('0') << f;
  return s.str();
}
inline std::string view_file(int v) {
  std::ostringstream s;
  s << "view_" << std::setw(2) << std::setfill('0') << v << ".ppm";
  return s.str();
}
inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}
inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

}  // namespace detail

/// Views in [0, views - held_out) train, the rest test.
inline DatasetManifest default_split(int frames, int views, int width, int height, int held_out = 4) {
  DatasetManifest m;
  m.frames = frames;
  m.views = views;
  m.width = width;
  m.height = height;
  const int test = std::min(held_out, views - 1);
  for (int v = 0; v < views; ++v) (v < views - test ? m.train_views : m.test_views).push_back(v);
  return m;
}

inline Dataset synthesize(const BlobScene& scene, const std::vector<Camera>& cams, int oracle_samples,
                          int held_out = 4) {
  scene.validate();
  if (cams.empty()) throw config_error("dataset needs at least one camera");
  Dataset ds;
  ds.manifest = default_split(scene.frames, static_cast<int>(cams.size()), cams[0].width, cams[0].height, held_out);
  ds.manifest.background = scene.background;
  ds.cameras = cams;
  ds.images.resize(scene.frames);
  for (int f = 0; f < scene.frames; ++f)
    for (const auto& c : cams) {
      // Stored images are 8-bit; keep the in-memory copy identical to disk.
      Image img = oracle_render(scene, c, f, oracle_samples);
      for (auto& v : img.rgb) v = static_cast<float>(to_byte(v) / 255.0);
      ds.images[f].push_back(std::move(img));
    }
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  const auto& m = ds.manifest;
  {
    std::ofstream f(dir / "manifest.txt");
    if (!f) throw io_error("cannot write " + (dir / "manifest.txt").string());
    f << "frames=" << m.frames << "\nviews=" << m.views << "\nwidth=" << m.width << "\nheight=" << m.height
      << "\ntrain_views=" << detail::join_ints(m.train_views) << "\ntest_views=" << detail::join_ints(m.test_views)
      << std::setprecision(9) << "\nbackground=" << m.background.x << ',' << m.background.y << ','
      << m.background.z << '\n';
  }
  {
    std::ofstream f(dir / "poses.txt");
    if (!f) throw io_error("cannot write " + (dir / "poses.txt").string());
    f << std::setprecision(17);
    for (const auto& c : ds.cameras) {
      f << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy;
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) f << ' ' << c.rotation[r * 3 + k];
        f << ' ' << c.position[r];
      }
      f << '\n';
    }
  }
  for (int fr = 0; fr < m.frames; ++fr) {
    const auto sub = dir / detail::frame_dir(fr);
    fs::create_directories(sub, ec);
    if (ec) throw io_error("cannot create " + sub.string() + ": " + ec.message());
    for (int v = 0; v < m.views; ++v) write_ppm(sub / detail::view_file(v), ds.images[fr][v]);
  }
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw format_error(path.string() + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t\r"), y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline Dataset load_dataset(const std::filesystem::path& dir, bool with_images = true) {
  const auto kv = read_key_values(dir / "manifest.txt");
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw format_error("manifest is missing '" + std::string(k) + "'");
    return it->second;
  };
  Dataset ds;
  auto& m = ds.manifest;
  try {
    m.frames = std::stoi(get("frames"));
    m.views = std::stoi(get("views"));
    m.width = std::stoi(get("width"));
    m.height = std::stoi(get("height"));
    m.train_views = detail::split_ints(get("train_views"));
    m.test_views = detail::split_ints(get("test_views"));
    if (kv.count("background")) {
      auto parts = kv.at("background");
      std::replace(parts.begin(), parts.end(), ',', ' ');
      std::istringstream s(parts);
      s >> m.background.x >> m.background.y >> m.background.z;
    }
  } catch (const std::logic_error&) {
    throw format_error("manifest has a malformed number");
  }
  if (m.frames < 1 || m.views < 1 || m.train_views.empty()) throw format_error("manifest counts are invalid");
  for (int v : m.train_views)
    if (v < 0 || v >= m.views || std::count(m.test_views.begin(), m.test_views.end(), v))
      throw format_error("train/test split is invalid");

  std::ifstream pf(dir / "poses.txt");
  if (!pf) throw io_error("cannot open " + (dir / "poses.txt").string());
  for (int v = 0; v < m.views; ++v) {
    Camera c;
    double p[16];
    for (double& x : p)
      if (!(pf >> x)) throw format_error("poses.txt: too few values for view " + std::to_string(v));
    c.fx = p[0];
    c.fy = p[1];
    c.cx = p[2];
    c.cy = p[3];
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) c.rotation[r * 3 + k] = p[4 + r * 4 + k];
      c.position[r] = p[4 + r * 4 + 3];
    }
    c.width = m.width;
    c.height = m.height;
    c.validate();
    ds.cameras.push_back(c);
  }
  if (with_images) {
    ds.images.resize(m.frames);
    for (int fr = 0; fr < m.frames; ++fr)
      for (int v = 0; v < m.views; ++v) {
        auto img = read_ppm(dir / detail::frame_dir(fr) / detail::view_file(v));
        if (img.width != m.width || img.height != m.height)
          throw format_error("image size differs from manifest for frame " + std::to_string(fr));
        ds.images[fr].push_back(std::move(img));
      }
  }
  return ds;
}

}  // namespace nvv
