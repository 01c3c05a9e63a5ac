#pragma once

// GOF encoding loop. Every frame is trained, quantized, coded and then
// reconstructed through the same code path the decoder uses, so P-frames
// always condition on decoded state.

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "nvv/bitstream.hpp"
#include "nvv/trainer.hpp"

namespace nvv {

/// What the encoder knows about a frame once it is coded.
struct EncodedFrame {
  std::uint32_t index = 0;
  FrameType type = FrameType::intra;
  const FrameState<float>* trained = nullptr;  // continuous parameters
  const FrameFields<float>* decoded = nullptr; // post-quantization fields
  const TrainMetrics* metrics = nullptr;
  std::size_t record_bytes = 0;
  ComponentBytes components;
  double seconds = 0;
};

using FrameSource = std::function<FrameRays(std::uint32_t frame)>;
using EncodeObserver = std::function<void(const EncodedFrame&)>;

struct EncodeResult {
  std::vector<std::uint8_t> bytes;
  std::vector<std::size_t> record_bytes;  // per frame
  std::size_t header_bytes = 0;
};

/// Training image size recorded in the header so evaluation can check the
/// dataset it is given.
struct ImageSize {
  int width = 0, height = 0;
};

inline StreamHeader stream_header(const TrainConfig& cfg, std::uint32_t frames, ImageSize image = {}) {
  StreamHeader h;
  h.layout = cfg.layout;
  h.gof_length = cfg.gof_length;
  h.background = cfg.background.cast<float>();
  h.samples_per_ray = cfg.samples_per_ray;
  h.width = image.width;
  h.height = image.height;
  h.frames = frames;
  return h;
}

inline FrameType frame_type_at(std::uint32_t t, int gof_length) {
  return t % static_cast<std::uint32_t>(gof_length) == 0 ? FrameType::intra : FrameType::predicted;
}

/// Laplace model chosen after the fact for an already trained tensor: mu at
/// the median symbol and the b on a log grid that minimizes the rounded
/// bit estimate. Used when training carried no rate term.
template <class T>
LaplaceModel<T> fit_laplace(std::span<const T> values) {
  if (values.empty()) return LaplaceModel<T>(T(0), T(1));
  std::int32_t lo = 0, hi = 0;
  const auto q = quantize_values<T>(values, lo, hi);
  std::vector<std::size_t> hist(static_cast<std::size_t>(hi - lo) + 1, 0);
  for (auto v : q) ++hist[static_cast<std::size_t>(v - lo)];
  std::size_t seen = 0, median = 0;
  for (; median < hist.size(); ++median) {
    seen += hist[median];
    if (2 * seen >= q.size()) break;
  }
  const T mu = static_cast<T>(lo + static_cast<std::int32_t>(median));
  LaplaceModel<T> best(mu, T(1));
  double best_bits = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 96; ++i) {
    const T b = static_cast<T>(std::exp(std::log(1e-2) + i * (std::log(1e3) - std::log(1e-2)) / 96));
    double bits = 0;
    for (std::size_t k = 0; k < hist.size(); ++k)
      if (hist[k]) bits += static_cast<double>(hist[k]) * bin_cost(static_cast<T>(lo + static_cast<std::int32_t>(k)) - mu, b).bits;
    if (bits < best_bits) {
      best_bits = bits;
      best = LaplaceModel<T>(mu, b);
    }
  }
  return best;
}

/// Codes one trained state. Returns the record and fills `decoded` with the
/// reconstruction. For P-frames `buffer` must hold B_hat_{t-1} and is not
/// modified; the caller adopts decoded->basis as the new buffer.
inline FrameRecord code_frame(const FrameState<float>& s, const DecodedFrameBuffer<float>* buffer,
                              FrameFields<float>& decoded, bool refit_models = false) {
  auto model = [&](std::size_t m, std::span<const float> v) {
    return refit_models ? fit_laplace<float>(v) : s.models[m];
  };
  FrameRecord rec;
  rec.type = s.pframe() ? FrameType::predicted : FrameType::intra;
  std::vector<std::int32_t> q;
  rec.tensors.push_back(encode_tensor<float>(0, s.fields.coef.values(), model(0, s.fields.coef.values()), &q));
  decoded.coef = grid_from_symbols<float>(s.fields.coef.dims(), s.fields.coef.channels(), q);
  std::vector<Grid3D<float>> levels;
  for (std::size_t l = 0; l < s.fields.basis.size(); ++l) {
    const auto v = s.level_values(l);
    rec.tensors.push_back(encode_tensor<float>(static_cast<std::uint8_t>(1 + l), v, model(1 + l, v), &q));
    const auto& g = s.fields.basis[l].grid;
    levels.push_back(grid_from_symbols<float>(g.dims(), g.channels(), q));
  }
  if (rec.type == FrameType::intra) {
    std::vector<BasisLevel<float>> bl;
    for (std::size_t l = 0; l < levels.size(); ++l) bl.push_back({std::move(levels[l]), s.fields.basis[l].frequency});
    decoded.basis = BasisPyramid<float>(std::move(bl));
    auto p = s.fields.mlp.params();
    rec.mlp.assign(p.begin(), p.end());
    decoded.mlp = s.fields.mlp;
  } else {
    if (!buffer) throw contract_error("P-frame coding needs the decoded frame buffer");
    ResidualPyramid<float> r;
    r.levels = std::move(levels);
    decoded.basis = apply_residual(buffer->basis, r);
    decoded.mlp = buffer->mlp;
  }
  decoded.dir_octaves = s.fields.dir_octaves;
  return rec;
}

/// Trains and codes `frames` frames in GOF order.
inline EncodeResult encode_sequence(std::uint32_t frames, const FrameSource& source, const TrainConfig& cfg,
                                    const EncodeObserver& observer = {}, ImageSize image = {}) {
  cfg.validate();
  if (frames == 0) throw config_error("nothing to encode (zero frames)");
  EncodeResult out;
  out.bytes = write_header(stream_header(cfg, frames, image));
  out.header_bytes = out.bytes.size();

  std::optional<FrameState<float>> prev;
  DecodedFrameBuffer<float> buffer;
  for (std::uint32_t t = 0; t < frames; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const FrameRays data = source(t);
    const FrameType type = frame_type_at(t, cfg.gof_length);
    TrainMetrics metrics;
    FrameState<float> s;
    if (type == FrameType::intra) {
      const bool later_gof = t > 0;
      const bool freeze = later_gof && cfg.freeze_mlp_after_first_gof;
      const FrameState<float>* warm = (later_gof && (cfg.iframe_warm_start || freeze)) ? &*prev : nullptr;
      s = train_iframe<float>(data, cfg, t, warm, &metrics, !freeze);
    } else {
      s = train_pframe<float>(data, &buffer, cfg, t, prev ? &*prev : nullptr, &metrics);
    }

    FrameFields<float> decoded;
    // Without a rate term the Laplace parameters never move from their
    // initial values, so they are fitted to the trained tensors instead.
    const FrameRecord rec = code_frame(s, type == FrameType::intra ? nullptr : &buffer, decoded, cfg.lambda1 == 0);
    const auto bytes = write_frame(rec);
    out.bytes.insert(out.bytes.end(), bytes.begin(), bytes.end());
    out.record_bytes.push_back(bytes.size());
    buffer.basis = decoded.basis;
    buffer.mlp = decoded.mlp;
    buffer.dir_octaves = decoded.dir_octaves;

    info("frame " + std::to_string(t) + " " + frame_type_char(type) + ": " + std::to_string(8 * bytes.size()) +
             " bits, loss " + std::to_string(metrics.last.total));
    if (observer) {
      EncodedFrame ef;
      ef.index = t;
      ef.type = type;
      ef.trained = &s;
      ef.decoded = &decoded;
      ef.metrics = &metrics;
      ef.record_bytes = bytes.size();
      ef.components = record_components(rec);
      ef.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      observer(ef);
    }
    prev = std::move(s);
  }
  return out;
}

}  // namespace nvv
