#pragma once

// The .nvv container: one header, then one record per frame. All integers
// are little-endian; floats are IEEE-754 binary32. FORMAT.md has the
// field-by-field layout.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "nvv/codec.hpp"
#include "nvv/error.hpp"
#include "nvv/field_set.hpp"
#include "nvv/rate_model.hpp"

namespace nvv {

inline constexpr std::array<std::uint8_t, 4> kMagic{'N', 'V', 'V', 'C'};
inline constexpr std::uint16_t kFormatVersion = 1;

enum class FrameType : std::uint8_t { intra = 0, predicted = 1 };

inline char frame_type_char(FrameType t) { return t == FrameType::intra ? 'I' : 'P'; }

struct StreamHeader {
  FieldLayout layout;
  int gof_length = 20;
  Vec3<float> background{1, 1, 1};
  int samples_per_ray = 64;
  int width = 0, height = 0;  // training image size; 0 when unknown
  std::uint32_t frames = 0;

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

/// Tensor ids: 0 is the coefficient grid, 1 + l basis level l (I-frames) or
/// residual level l (P-frames).
struct TensorRecord {
  std::uint8_t id = 0;
  float mu = 0, b = 1;
  std::int32_t vmin = 0, vmax = 0;
  std::uint32_t count = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct FrameRecord {
  FrameType type = FrameType::intra;
  std::vector<TensorRecord> tensors;
  std::vector<float> mlp;  // I-frames only

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

/// Fixed byte cost of the framing around the tensors.
inline constexpr std::size_t kRecordPrefixBytes = 1 + 4;       // type, body length
inline constexpr std::size_t kTensorHeaderBytes = 1 + 4 * 6;   // id, mu, b, vmin, vmax, count, payload length

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> b, std::string what) : b_(b), what_(std::move(what)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    return std::uint32_t{s[0]} | (std::uint32_t{s[1]} << 8) | (std::uint32_t{s[2]} << 16) | (std::uint32_t{s[3]} << 24);
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > b_.size() - pos_) throw format_error(what_ + " is truncated");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline void write_dims(ByteWriter& w, Dims3 d) {
  w.u16(static_cast<std::uint16_t>(d.nx));
  w.u16(static_cast<std::uint16_t>(d.ny));
  w.u16(static_cast<std::uint16_t>(d.nz));
}
inline Dims3 read_dims(ByteReader& r) {
  Dims3 d;
  d.nx = r.u16();
  d.ny = r.u16();
  d.nz = r.u16();
  return d;
}

}  // namespace detail

inline std::vector<std::uint8_t> write_header(const StreamHeader& h) {
  h.layout.validate();
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kFormatVersion);
  detail::write_dims(w, h.layout.coef_dims);
  w.u8(static_cast<std::uint8_t>(h.layout.levels()));
  w.u16(static_cast<std::uint16_t>(h.layout.basis_channels));
  for (int l = 0; l < h.layout.levels(); ++l) {
    detail::write_dims(w, h.layout.basis_dims[l]);
    w.u16(static_cast<std::uint16_t>(h.layout.basis_freqs[l]));
  }
  w.u8(static_cast<std::uint8_t>(h.layout.mlp_hidden.size()));
  for (int width : h.layout.mlp_hidden) w.u16(static_cast<std::uint16_t>(width));
  w.u8(static_cast<std::uint8_t>(h.layout.dir_octaves));
  w.u16(static_cast<std::uint16_t>(h.gof_length));
  w.f32(h.background.x);
  w.f32(h.background.y);
  w.f32(h.background.z);
  w.u16(static_cast<std::uint16_t>(h.samples_per_ray));
  w.u16(static_cast<std::uint16_t>(h.width));
  w.u16(static_cast<std::uint16_t>(h.height));
  w.u32(h.frames);
  return std::move(w.data());
}

/// Parses the header at the front of `bytes`; `consumed` receives its size.
inline StreamHeader read_header(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  detail::ByteReader r(bytes, "stream header");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw format_error("not an .nvv stream (bad magic)");
  const auto version = r.u16();
  if (version != kFormatVersion)
    throw format_error("unsupported .nvv version " + std::to_string(version) + " (expected " +
                       std::to_string(kFormatVersion) + ")");
  StreamHeader h;
  h.layout.coef_dims = detail::read_dims(r);
  const int levels = r.u8();
  h.layout.basis_channels = r.u16();
  h.layout.basis_dims.clear();
  h.layout.basis_freqs.clear();
  for (int l = 0; l < levels; ++l) {
    h.layout.basis_dims.push_back(detail::read_dims(r));
    h.layout.basis_freqs.push_back(r.u16());
  }
  h.layout.mlp_hidden.resize(r.u8());
  for (int& width : h.layout.mlp_hidden) width = r.u16();
  h.layout.dir_octaves = r.u8();
  h.gof_length = r.u16();
  h.background.x = r.f32();
  h.background.y = r.f32();
  h.background.z = r.f32();
  h.samples_per_ray = r.u16();
  h.width = r.u16();
  h.height = r.u16();
  h.frames = r.u32();
  try {
    h.layout.validate();
  } catch (const config_error& e) {
    throw format_error(std::string("stream header describes an invalid layout: ") + e.what());
  }
  auto too_small = [](Dims3 d) { return d.nx < 2 || d.ny < 2 || d.nz < 2; };
  if (too_small(h.layout.coef_dims)) throw format_error("stream header coefficient grid is smaller than 2^3");
  for (const auto& d : h.layout.basis_dims)
    if (too_small(d)) throw format_error("stream header basis grid is smaller than 2^3");
  if (h.gof_length < 1 || h.samples_per_ray < 1) throw format_error("stream header has zero GOF length or samples");
  consumed = r.pos();
  return h;
}

inline std::vector<std::uint8_t> write_frame(const FrameRecord& rec) {
  detail::ByteWriter body;
  body.u16(static_cast<std::uint16_t>(rec.tensors.size()));
  for (const auto& t : rec.tensors) {
    body.u8(t.id);
    body.f32(t.mu);
    body.f32(t.b);
    body.i32(t.vmin);
    body.i32(t.vmax);
    body.u32(t.count);
    body.u32(static_cast<std::uint32_t>(t.payload.size()));
    body.bytes(t.payload);
  }
  if (rec.type == FrameType::intra) {
    body.u32(static_cast<std::uint32_t>(rec.mlp.size()));
    for (float v : rec.mlp) body.f32(v);
  } else if (!rec.mlp.empty()) {
    throw contract_error("P-frame records carry no MLP");
  }
  detail::ByteWriter w;
  w.u8(static_cast<std::uint8_t>(rec.type));
  w.u32(static_cast<std::uint32_t>(body.data().size()));
  w.bytes(body.data());
  return std::move(w.data());
}

/// Parses one record starting at `bytes[0]`; `consumed` receives its size.
/// Never reads past the record's declared length.
inline FrameRecord read_frame(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  detail::ByteReader outer(bytes, "frame record");
  FrameRecord rec;
  const auto type = outer.u8();
  if (type > 1) throw format_error("unknown frame type " + std::to_string(type));
  rec.type = static_cast<FrameType>(type);
  const auto len = outer.u32();
  detail::ByteReader r(outer.take(len), "frame record body");
  const int n = r.u16();
  for (int i = 0; i < n; ++i) {
    TensorRecord t;
    t.id = r.u8();
    t.mu = r.f32();
    t.b = r.f32();
    t.vmin = r.i32();
    t.vmax = r.i32();
    t.count = r.u32();
    const auto plen = r.u32();
    auto p = r.take(plen);
    t.payload.assign(p.begin(), p.end());
    rec.tensors.push_back(std::move(t));
  }
  if (rec.type == FrameType::intra) {
    const auto m = r.u32();
    if (m > r.remaining() / 4) throw format_error("MLP parameter count exceeds record length");
    rec.mlp.resize(m);
    for (float& v : rec.mlp) v = r.f32();
  }
  if (r.remaining() != 0) throw format_error("frame record length mismatch (" + std::to_string(r.remaining()) +
                                             " unread bytes)");
  consumed = outer.pos();
  return rec;
}

/// Quantizes and range codes one tensor under its Laplace model. The model
/// is rounded to binary32 first, exactly as the decoder will see it.
/// `symbols` receives the quantized values.
template <class T>
TensorRecord encode_tensor(std::uint8_t id, std::span<const T> values, const LaplaceModel<T>& model,
                           std::vector<std::int32_t>* symbols = nullptr) {
  TensorRecord t;
  t.id = id;
  t.mu = static_cast<float>(model.mu);
  t.b = static_cast<float>(model.b());
  t.count = static_cast<std::uint32_t>(values.size());
  auto q = quantize_values<T>(values, t.vmin, t.vmax);
  t.payload = range_encode(q, build_freq_table(t.mu, t.b, t.vmin, t.vmax));
  if (symbols) *symbols = std::move(q);
  return t;
}

inline std::vector<std::int32_t> decode_tensor(const TensorRecord& t, std::size_t expected_count) {
  if (t.count != expected_count)
    throw format_error("tensor " + std::to_string(t.id) + " holds " + std::to_string(t.count) + " entries, expected " +
                       std::to_string(expected_count));
  if (t.vmin > t.vmax) throw format_error("tensor " + std::to_string(t.id) + " has vmin > vmax");
  if (!(t.b > 0) || !std::isfinite(t.b) || !std::isfinite(t.mu))
    throw format_error("tensor " + std::to_string(t.id) + " has an invalid Laplace model");
  FreqTable table;
  try {
    table = build_freq_table(t.mu, t.b, t.vmin, t.vmax);
  } catch (const range_error& e) {
    throw format_error(std::string("tensor symbol range is unusable: ") + e.what());
  }
  return range_decode(t.payload, table, t.count);
}

template <class T>
Grid3D<T> grid_from_symbols(Dims3 dims, int channels, std::span<const std::int32_t> q) {
  Grid3D<T> g(dims, channels);
  if (g.size() != q.size()) throw format_error("symbol count does not match grid shape");
  auto out = g.values();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<T>(q[i]);
  return g;
}

/// Byte counts per component for the bitrate allocation report.
struct ComponentBytes {
  std::size_t meta = 0, mlp = 0, coef = 0, basis = 0;

  std::size_t total() const { return meta + mlp + coef + basis; }
  ComponentBytes& operator+=(const ComponentBytes& o) {
    meta += o.meta;
    mlp += o.mlp;
    coef += o.coef;
    basis += o.basis;
    return *this;
  }
};

inline ComponentBytes record_components(const FrameRecord& rec) {
  ComponentBytes c;
  c.meta = kRecordPrefixBytes + 2;
  for (const auto& t : rec.tensors) {
    c.meta += kTensorHeaderBytes;
    (t.id == 0 ? c.coef : c.basis) += t.payload.size();
  }
  if (rec.type == FrameType::intra) {
    c.meta += 4;
    c.mlp = 4 * rec.mlp.size();
  }
  return c;
}

/// Renderable reconstruction of one frame.
struct DecodedFrame {
  std::uint32_t index = 0;
  FrameType type = FrameType::intra;
  FrameFields<float> fields;
  std::size_t record_bytes = 0;
  ComponentBytes components;
};

/// Reads a stream front to back, maintaining the decoded basis buffer.
class SequenceDecoder {
 public:
  explicit SequenceDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    std::size_t n = 0;
    header_ = read_header(bytes_, n);
    pos_ = n;
  }

  const StreamHeader& header() const { return header_; }
  std::size_t header_bytes() const {
    std::size_t n = 0;
    read_header(bytes_, n);
    return n;
  }

  /// Decodes the next frame into `out`; false at the end of the stream.
  bool next(DecodedFrame& out) {
    if (index_ == header_.frames) {
      if (pos_ != bytes_.size()) throw format_error("trailing bytes after the last frame");
      return false;
    }
    if (pos_ >= bytes_.size()) throw format_error("stream ends after " + std::to_string(index_) + " of " +
                                                  std::to_string(header_.frames) + " frames");
    std::size_t used = 0;
    const FrameRecord rec = read_frame(bytes_.subspan(pos_), used);
    pos_ += used;

    const auto& L = header_.layout;
    const std::size_t levels = static_cast<std::size_t>(L.levels());
    if (rec.tensors.size() != 1 + levels) throw format_error("frame record has the wrong tensor count");
    for (std::size_t i = 0; i < rec.tensors.size(); ++i)
      if (rec.tensors[i].id != i) throw format_error("frame record tensors out of order");

    const Dims3 cd = L.coef_dims;
    const auto cq = decode_tensor(rec.tensors[0], cd.voxels() * L.coef_channels());
    Grid3D<float> coef = grid_from_symbols<float>(cd, L.coef_channels(), cq);
    std::vector<Grid3D<float>> level_grids;
    for (std::size_t l = 0; l < levels; ++l) {
      const auto q = decode_tensor(rec.tensors[1 + l], L.basis_dims[l].voxels() * L.basis_channels);
      level_grids.push_back(grid_from_symbols<float>(L.basis_dims[l], L.basis_channels, q));
    }

    if (rec.type == FrameType::intra) {
      std::vector<BasisLevel<float>> bl;
      for (std::size_t l = 0; l < levels; ++l) bl.push_back({std::move(level_grids[l]), L.basis_freqs[l]});
      basis_ = BasisPyramid<float>(std::move(bl));
      mlp_ = TinyMlp<float>(L.mlp_shape());
      if (rec.mlp.size() != mlp_.params().size()) throw format_error("MLP parameter count does not match header");
      std::copy(rec.mlp.begin(), rec.mlp.end(), mlp_.params().begin());
      have_buffer_ = true;
    } else {
      if (!have_buffer_) throw format_error("P-frame before any I-frame");
      ResidualPyramid<float> r;
      r.levels = std::move(level_grids);
      basis_ = apply_residual(basis_, r);
    }
    out.index = index_++;
    out.type = rec.type;
    out.fields.coef = std::move(coef);
    out.fields.basis = basis_;
    out.fields.mlp = mlp_;
    out.fields.dir_octaves = L.dir_octaves;
    out.record_bytes = used;
    out.components = record_components(rec);
    return true;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  StreamHeader header_;
  std::size_t pos_ = 0;
  std::uint32_t index_ = 0;
  bool have_buffer_ = false;
  BasisPyramid<float> basis_;
  TinyMlp<float> mlp_;
};

inline std::vector<DecodedFrame> decode_sequence(std::span<const std::uint8_t> bytes) {
  SequenceDecoder dec(bytes);
  std::vector<DecodedFrame> out;
  DecodedFrame f;
  while (dec.next(f)) out.push_back(f);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("failed writing " + path.string());
}

}  // namespace nvv
