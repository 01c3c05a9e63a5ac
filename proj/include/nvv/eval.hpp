#pragma once

// Decoding-side evaluation: per-frame PSNR and bits, RD curves with
// Bjontegaard delta rate, the bitrate allocation report and the three-row
// ablation.

#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "nvv/bitstream.hpp"
#include "nvv/encoder.hpp"
#include "nvv/scene_oracle.hpp"

namespace nvv {

struct RdPoint {
  double rate_bits = 0;  // mean bits per frame
  double psnr_train = 0;
  double psnr_test = 0;

  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;

  friend bool operator==(const RdCurve&, const RdCurve&) = default;
};

/// Training rays of frame `f` over the dataset's train views.
inline FrameRays dataset_frame_rays(const Dataset& ds, std::uint32_t f) {
  const auto& m = ds.manifest;
  const auto cams = ds.cams(m.train_views);
  const auto imgs = ds.frame_images(static_cast<int>(f), m.train_views);
  return make_frame_rays(cams, imgs);
}

inline EncodeResult encode_dataset(const Dataset& ds, const TrainConfig& cfg, const EncodeObserver& observer = {},
                                   int frames = -1) {
  const int n = frames < 0 ? ds.manifest.frames : std::min(frames, ds.manifest.frames);
  TrainConfig c = cfg;
  c.background = ds.manifest.background;
  return encode_sequence(
      static_cast<std::uint32_t>(n), [&](std::uint32_t f) { return dataset_frame_rays(ds, f); }, c, observer,
      {ds.manifest.width, ds.manifest.height});
}

/// Mean per-view PSNR of `fields` over `views` of frame `frame`.
template <class T>
double views_psnr(const FrameFields<T>& fields, const Dataset& ds, int frame, const std::vector<int>& views,
                  int samples, Vec3<T> background) {
  if (views.empty()) return 0;
  double sum = 0;
  for (int v : views) sum += psnr(render_image(fields, ds.cameras[v], samples, background), ds.images[frame][v]);
  return sum / static_cast<double>(views.size());
}

struct FrameEval {
  std::uint32_t index = 0;
  FrameType type = FrameType::intra;
  std::size_t bits = 0;  // 8 x record length
  double psnr_train = 0, psnr_test = 0;
};

struct SequenceEval {
  RdPoint mean;  // rate = 8 x file size / frames
  std::vector<FrameEval> frames;
  std::size_t total_bytes = 0;
};

inline void check_stream_matches(const StreamHeader& h, const Dataset& ds) {
  const auto& m = ds.manifest;
  if ((h.width && h.width != m.width) || (h.height && h.height != m.height))
    throw config_error("stream was trained on " + std::to_string(h.width) + "x" + std::to_string(h.height) +
                       " images, dataset has " + std::to_string(m.width) + "x" + std::to_string(m.height));
  if (static_cast<int>(h.frames) > m.frames)
    throw config_error("stream has " + std::to_string(h.frames) + " frames, dataset only " + std::to_string(m.frames));
  if (h.background != m.background.cast<float>()) throw config_error("stream and dataset backgrounds differ");
  if (ds.images.size() < h.frames) throw config_error("dataset images not loaded");
}

/// Decodes `stream` and renders every frame at the train and test views.
inline SequenceEval eval_sequence(std::span<const std::uint8_t> stream, const Dataset& ds) {
  SequenceDecoder dec(stream);
  const auto& h = dec.header();
  check_stream_matches(h, ds);
  SequenceEval out;
  out.total_bytes = stream.size();
  DecodedFrame f;
  double tr = 0, te = 0;
  while (dec.next(f)) {
    FrameEval e;
    e.index = f.index;
    e.type = f.type;
    e.bits = 8 * f.record_bytes;
    e.psnr_train = views_psnr(f.fields, ds, static_cast<int>(f.index), ds.manifest.train_views, h.samples_per_ray,
                              h.background);
    e.psnr_test = views_psnr(f.fields, ds, static_cast<int>(f.index), ds.manifest.test_views, h.samples_per_ray,
                             h.background);
    tr += e.psnr_train;
    te += e.psnr_test;
    out.frames.push_back(e);
  }
  const double n = static_cast<double>(out.frames.size());
  out.mean = {8.0 * static_cast<double>(stream.size()) / n, tr / n, te / n};
  return out;
}

// ---------------------------------------------------------------- BD-rate

enum class RdMetric { train, test };

namespace detail {

inline double metric_of(const RdPoint& p, RdMetric m) { return m == RdMetric::train ? p.psnr_train : p.psnr_test; }

/// Least-squares polynomial (ascending coefficients) of log(rate) in PSNR.
inline std::vector<double> fit_log_rate(const RdCurve& c, RdMetric m) {
  const int n = static_cast<int>(c.points.size());
  const int deg = std::min(3, n - 1);
  Eigen::MatrixXd a(n, deg + 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double p = metric_of(c.points[i], m);
    double x = 1;
    for (int d = 0; d <= deg; ++d, x *= p) a(i, d) = x;
    y(i) = std::log(c.points[i].rate_bits);
  }
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(y);
  return {coef.data(), coef.data() + coef.size()};
}

inline double integrate_poly(const std::vector<double>& c, double lo, double hi) {
  double s = 0, xl = lo, xh = hi;
  for (std::size_t d = 0; d < c.size(); ++d, xl *= lo, xh *= hi) s += c[d] * (xh - xl) / static_cast<double>(d + 1);
  return s;
}

inline void check_curve(const RdCurve& c) {
  if (c.points.size() < 2) throw config_error("BD-rate needs at least 2 points on curve '" + c.label + "'");
  for (const auto& p : c.points)
    if (!(p.rate_bits > 0)) throw config_error("curve '" + c.label + "' has a non-positive rate");
  if (c.points.size() < 4) warn("curve '" + c.label + "' has fewer than 4 points; BD-rate is a rough estimate");
}

}  // namespace detail

/// Average rate difference of `test` vs `anchor` at equal PSNR, in percent:
/// cubic fits of log rate vs PSNR integrated over the shared PSNR range.
inline double bd_rate(const RdCurve& anchor, const RdCurve& test, RdMetric metric = RdMetric::test) {
  detail::check_curve(anchor);
  detail::check_curve(test);
  auto range = [&](const RdCurve& c) {
    double lo = detail::metric_of(c.points[0], metric), hi = lo;
    for (const auto& p : c.points) {
      lo = std::min(lo, detail::metric_of(p, metric));
      hi = std::max(hi, detail::metric_of(p, metric));
    }
    return std::pair{lo, hi};
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  if (!(hi > lo)) throw config_error("RD curves '" + anchor.label + "' and '" + test.label + "' share no PSNR range");
  const auto pa = detail::fit_log_rate(anchor, metric);
  const auto pt = detail::fit_log_rate(test, metric);
  const double avg = (detail::integrate_poly(pt, lo, hi) - detail::integrate_poly(pa, lo, hi)) / (hi - lo);
  return 100.0 * std::expm1(avg);
}

inline void write_rd_csv(const std::filesystem::path& path, const RdCurve& c) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write " + path.string());
  f << "rate_bits,psnr_train,psnr_test\n" << std::setprecision(17);
  for (const auto& p : c.points) f << p.rate_bits << ',' << p.psnr_train << ',' << p.psnr_test << '\n';
  if (!f) throw io_error("failed writing " + path.string());
}

inline RdCurve read_rd_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open " + path.string());
  RdCurve c;
  c.label = path.stem().string();
  std::string line;
  if (!std::getline(f, line) || line.rfind("rate_bits,psnr_train,psnr_test", 0) != 0)
    throw format_error(path.string() + ": expected header rate_bits,psnr_train,psnr_test");
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    RdPoint p;
    char c1 = 0, c2 = 0;
    if (!(ss >> p.rate_bits >> c1 >> p.psnr_train >> c2 >> p.psnr_test) || c1 != ',' || c2 != ',')
      throw format_error(path.string() + ":" + std::to_string(row) + ": malformed row");
    c.points.push_back(p);
  }
  return c;
}

// ------------------------------------------------------------- allocation

struct AllocationReport {
  ComponentBytes bytes;

  std::size_t total() const { return bytes.total(); }
  double percent(std::size_t part) const {
    return total() ? 100.0 * static_cast<double>(part) / static_cast<double>(total()) : 0.0;
  }
  std::string table() const {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1);
    auto row = [&](const char* name, std::size_t b) {
      s << std::left << std::setw(18) << name << std::right << std::setw(12) << b << std::setw(8) << percent(b)
        << "%\n";
    };
    row("meta", bytes.meta);
    row("mlp", bytes.mlp);
    row("coefficient", bytes.coef);
    row("basis/residual", bytes.basis);
    row("total", total());
    return s.str();
  }
};

/// Byte counts per component over a whole stream; the header counts as meta.
inline AllocationReport allocation_report(std::span<const std::uint8_t> stream) {
  std::size_t pos = 0;
  const auto h = read_header(stream, pos);
  AllocationReport r;
  r.bytes.meta = pos;
  for (std::uint32_t i = 0; i < h.frames; ++i) {
    std::size_t used = 0;
    r.bytes += record_components(read_frame(stream.subspan(pos), used));
    pos += used;
  }
  if (pos != stream.size()) throw format_error("trailing bytes after the last frame");
  return r;
}

// --------------------------------------------------------------- ablation

struct AblationRow {
  std::string label;
  RdPoint point;
};

/// Raw binary32 parameters of a frame (coefficients, basis, MLP), deflated.
inline std::size_t packed_fields_bytes(const FrameFields<float>& f) {
  std::vector<std::uint8_t> raw;
  auto put = [&](std::span<const float> v) {
    for (float x : v) {
      const auto u = std::bit_cast<std::uint32_t>(x);
      for (int i = 0; i < 4; ++i) raw.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  };
  put(f.coef.values());
  for (const auto& l : f.basis.levels()) put(l.grid.values());
  put(f.mlp.params());
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<Bytef> out(len);
  if (compress2(out.data(), &len, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
    throw io_error("zlib compression failed");
  return len;
}

/// Per-frame independent fields without a rate term, stored losslessly. Frame
/// t > 0 starts from frame t - 1 and gets the P-frame iteration budget, so
/// the training effort matches the dynamic rows.
inline AblationRow baseline_row(const Dataset& ds, const TrainConfig& cfg, int frames) {
  TrainConfig c = cfg;
  c.lambda1 = 0;
  c.background = ds.manifest.background;
  TrainConfig warm_cfg = c;
  warm_cfg.iframe_iters = c.pframe_iters;
  std::optional<FrameState<float>> prev;
  AblationRow row{"baseline", {}};
  const Vec3<float> bg = c.background.cast<float>();
  for (int t = 0; t < frames; ++t) {
    const FrameRays data = dataset_frame_rays(ds, static_cast<std::uint32_t>(t));
    FrameState<float> s = prev ? train_iframe<float>(data, warm_cfg, t, &*prev) : train_iframe<float>(data, c, t);
    row.point.rate_bits += 8.0 * static_cast<double>(packed_fields_bytes(s.fields));
    row.point.psnr_train += views_psnr(s.fields, ds, t, ds.manifest.train_views, c.samples_per_ray, bg);
    row.point.psnr_test += views_psnr(s.fields, ds, t, ds.manifest.test_views, c.samples_per_ray, bg);
    info("baseline frame " + std::to_string(t) + " done");
    prev = std::move(s);
  }
  row.point.rate_bits /= frames;
  row.point.psnr_train /= frames;
  row.point.psnr_test /= frames;
  return row;
}

inline AblationRow coded_row(std::string label, std::span<const std::uint8_t> stream, const Dataset& ds) {
  return {std::move(label), eval_sequence(stream, ds).mean};
}

/// Baseline, + dynamic modeling (rate-free training, post-hoc coding) and
/// + joint optimization (the full method at cfg.lambda1).
inline std::vector<AblationRow> ablation_run(const Dataset& ds, const TrainConfig& cfg, int frames = -1) {
  const int n = frames < 0 ? ds.manifest.frames : std::min(frames, ds.manifest.frames);
  std::vector<AblationRow> rows;
  rows.push_back(baseline_row(ds, cfg, n));
  TrainConfig posthoc = cfg;
  posthoc.lambda1 = 0;
  rows.push_back(coded_row("+dynamic", encode_dataset(ds, posthoc, {}, n).bytes, ds));
  rows.push_back(coded_row("+joint", encode_dataset(ds, cfg, {}, n).bytes, ds));
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(12) << "row" << std::right << std::setw(16) << "bits/frame" << std::setw(12)
    << "train dB" << std::setw(12) << "test dB" << '\n'
    << std::fixed;
  for (const auto& r : rows)
    s << std::left << std::setw(12) << r.label << std::right << std::setw(16) << std::setprecision(0)
      << r.point.rate_bits << std::setw(12) << std::setprecision(2) << r.point.psnr_train << std::setw(12)
      << r.point.psnr_test << '\n';
  return s.str();
}

}  // namespace nvv
