#pragma once

// Unit-step quantization, Laplace frequency tables and an integer range
// coder. Nothing inside the coding loop touches floating point; the only
// floating-point work is building a table from (mu, b), which encoder and
// decoder do through the same function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/grid_field.hpp"

namespace nvv {

inline constexpr int kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;
inline constexpr std::int64_t kMaxQuantized = std::int64_t{1} << 30;

struct QuantizedGrid {
  Dims3 dims{};
  int channels = 0;
  std::vector<std::int32_t> values;
  std::int32_t vmin = 0, vmax = 0;

  friend bool operator==(const QuantizedGrid&, const QuantizedGrid&) = default;
};

/// Rounds half away from zero and records the empirical symbol range.
template <class T>
std::vector<std::int32_t> quantize_values(std::span<const T> values, std::int32_t& vmin, std::int32_t& vmax) {
  std::vector<std::int32_t> q(values.size());
  vmin = 0;
  vmax = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(values[i]);
    if (!std::isfinite(v) || std::abs(v) > static_cast<double>(kMaxQuantized))
      throw range_error("value " + std::to_string(v) + " cannot be quantized (training diverged?)");
    q[i] = static_cast<std::int32_t>(std::round(v));
    if (i == 0 || q[i] < vmin) vmin = q[i];
    if (i == 0 || q[i] > vmax) vmax = q[i];
  }
  return q;
}

template <class T>
QuantizedGrid quantize(const Grid3D<T>& grid) {
  QuantizedGrid q;
  q.dims = grid.dims();
  q.channels = grid.channels();
  q.values = quantize_values<T>(grid.values(), q.vmin, q.vmax);
  return q;
}

template <class T = float>
Grid3D<T> dequantize(const QuantizedGrid& q) {
  Grid3D<T> g(q.dims, q.channels);
  if (g.size() != q.values.size()) throw format_error("quantized grid size does not match its shape");
  auto out = g.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(q.values[i]);
  return g;
}

/// Frequencies over the symbol range [vmin, vmax], each >= 1, summing to 2^16.
struct FreqTable {
  std::int32_t vmin = 0, vmax = 0;
  std::vector<std::uint32_t> freq;
  std::vector<std::uint32_t> cum;  // cum[i] = sum of freq[0..i), cum.back() == kFreqTotal

  std::size_t symbols() const { return freq.size(); }
  std::uint32_t frequency(std::int32_t s) const { return freq[static_cast<std::size_t>(s - vmin)]; }

  friend bool operator==(const FreqTable&, const FreqTable&) = default;
};

namespace detail {

/// log P(bin [s - 1/2, s + 1/2]) under Laplace(mu, b), stable in the tails.
inline double log_bin_probability(double s, double mu, double b) {
  const double a = std::abs(s - mu);
  if (a >= 0.5) return -0.6931471805599453 - (a - 0.5) / b + std::log1p(-std::exp(-1.0 / b));
  const double e1 = std::exp(-(0.5 + a) / b);
  const double e2 = std::exp(-(0.5 - a) / b);
  return std::log(1.0 - 0.5 * (e1 + e2));
}

}  // namespace detail

/// Discretized Laplace over [vmin, vmax], renormalized to the range and
/// apportioned to 2^16 by largest remainder with a floor of 1 per symbol.
/// Ties are broken by symbol order, so the table is a pure function of the
/// arguments.
inline FreqTable build_freq_table(double mu, double b, std::int32_t vmin, std::int32_t vmax) {
  if (vmin > vmax) throw config_error("frequency table needs vmin <= vmax");
  if (!(b > 0) || !std::isfinite(b) || !std::isfinite(mu)) throw config_error("Laplace scale must be positive");
  const std::int64_t k64 = static_cast<std::int64_t>(vmax) - vmin + 1;
  if (k64 > static_cast<std::int64_t>(kFreqTotal))
    throw range_error("symbol range of " + std::to_string(k64) + " exceeds 2^16 symbols; split the range");
  const std::size_t k = static_cast<std::size_t>(k64);

  std::vector<double> weight(k);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    weight[i] = detail::log_bin_probability(static_cast<double>(vmin) + static_cast<double>(i), mu, b);
    peak = std::max(peak, weight[i]);
  }
  double sum = 0;
  for (std::size_t i = 0; i < k; ++i) {
    weight[i] = std::exp(weight[i] - peak);
    sum += weight[i];
  }

  FreqTable t;
  t.vmin = vmin;
  t.vmax = vmax;
  t.freq.resize(k);
  std::vector<double> remainder(k);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = static_cast<double>(kFreqTotal) * (weight[i] / sum);
    const double fl = std::floor(quota);
    t.freq[i] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(fl));
    remainder[i] = quota - static_cast<double>(t.freq[i]);
    assigned += t.freq[i];
  }
  // Hand out (or take back) the leftover units by remainder. Symbols with
  // exactly equal remainders move as a group; when a group cannot be served
  // whole, the rest goes to (or comes from) the mode, so tables of
  // symmetric models stay symmetric.
  std::size_t mode = 0;
  for (std::size_t i = 1; i < k; ++i)
    if (weight[i] > weight[mode]) mode = i;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t diff = static_cast<std::int64_t>(kFreqTotal) - assigned;
  if (diff > 0) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return remainder[a] > remainder[c]; });
    std::size_t j = 0;
    while (diff > 0 && j < k) {
      std::size_t end = j + 1;
      while (end < k && remainder[order[end]] == remainder[order[j]]) ++end;
      const auto group = static_cast<std::int64_t>(end - j);
      if (group > diff) break;
      for (; j < end; ++j) ++t.freq[order[j]];
      diff -= group;
    }
    t.freq[mode] += static_cast<std::uint32_t>(diff);
  } else if (diff < 0) {
    // Floors pushed the total over; take back from the symbols that gained
    // the most relative to their quota.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return remainder[a] < remainder[c]; });
    bool progressed = true;
    while (diff < 0 && progressed) {
      progressed = false;
      for (std::size_t j = 0; j < k && diff < 0;) {
        std::size_t end = j + 1;
        while (end < k && remainder[order[end]] == remainder[order[j]]) ++end;
        std::int64_t takers = 0;
        for (std::size_t i = j; i < end; ++i) takers += t.freq[order[i]] > 1;
        if (takers > -diff) break;
        for (; j < end; ++j)
          if (t.freq[order[j]] > 1) {
            --t.freq[order[j]];
            ++diff;
            progressed = true;
          }
      }
    }
    if (diff < 0 && t.freq[mode] > static_cast<std::uint32_t>(-diff)) {
      t.freq[mode] -= static_cast<std::uint32_t>(-diff);
      diff = 0;
    }
    for (std::size_t j = 0; diff < 0; j = (j + 1) % k) {
      if (j == 0 && std::all_of(t.freq.begin(), t.freq.end(), [](std::uint32_t f) { return f <= 1; }))
        throw range_error("cannot apportion frequency table");
      if (t.freq[order[j]] > 1) {
        --t.freq[order[j]];
        ++diff;
      }
    }
  }
  t.cum.resize(k + 1);
  t.cum[0] = 0;
  for (std::size_t i = 0; i < k; ++i) t.cum[i + 1] = t.cum[i] + t.freq[i];
  return t;
}

/// Range coder with a 56-bit window and byte-wise carry propagation (the
/// cache/pending-0xFF scheme of LZMA's coder). Totals are fixed at 2^16.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    const std::uint64_t r = range_ >> kFreqBits;
    low_ += r * cum;
    range_ = r * freq;
    while (range_ < kBottom) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < kWindowBytes + 1; ++i) shift_low();
    // The first byte carries the initial (always zero) cache; it is implied.
    if (out_.empty() || out_.front() != 0) throw range_error("range coder produced an invalid leading byte");
    out_.erase(out_.begin());
    return std::move(out_);
  }

  static constexpr int kWindowBytes = 7;
  static constexpr std::uint64_t kTop = std::uint64_t{1} << 56;
  static constexpr std::uint64_t kBottom = std::uint64_t{1} << 48;

 private:
  void shift_low() {
    if ((low_ & (kTop - 1)) < (std::uint64_t{0xFF} << 48) || (low_ >> 56) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 56);
      std::uint8_t pending = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(pending + carry));
        pending = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 48);
    }
    ++cache_size_;
    low_ = (low_ & (kBottom - 1)) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint64_t range_ = kTop - 1;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    for (int i = 0; i < RangeEncoder::kWindowBytes; ++i) code_ = (code_ << 8) | next();
  }

  /// Target frequency slot in [0, 2^16) for the next symbol.
  std::uint32_t peek() {
    r_ = range_ >> kFreqBits;
    const std::uint64_t v = code_ / r_;
    if (v >= kFreqTotal) throw format_error("range decoder state is corrupt (wrong table or damaged payload)");
    return static_cast<std::uint32_t>(v);
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= r_ * cum;
    range_ = r_ * freq;
    while (range_ < RangeEncoder::kBottom) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

  std::size_t consumed() const { return pos_; }

 private:
  std::uint64_t next() {
    if (pos_ >= bytes_.size()) throw format_error("range-coded payload is truncated");
    return bytes_[pos_++];
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint64_t code_ = 0;
  std::uint64_t range_ = RangeEncoder::kTop - 1;
  std::uint64_t r_ = 0;
};

inline std::vector<std::uint8_t> range_encode(std::span<const std::int32_t> symbols, const FreqTable& table) {
  if (symbols.empty()) return {};
  RangeEncoder enc;
  for (std::int32_t s : symbols) {
    if (s < table.vmin || s > table.vmax)
      throw range_error("symbol " + std::to_string(s) + " outside table range [" + std::to_string(table.vmin) +
                        ", " + std::to_string(table.vmax) + "]");
    const auto i = static_cast<std::size_t>(s - table.vmin);
    enc.encode(table.cum[i], table.freq[i]);
  }
  return enc.finish();
}

/// Decodes exactly `n` symbols; the payload must be consumed exactly.
inline std::vector<std::int32_t> range_decode(std::span<const std::uint8_t> bytes, const FreqTable& table,
                                              std::size_t n) {
  if (n == 0) {
    if (!bytes.empty()) throw format_error("non-empty payload for an empty tensor");
    return {};
  }
  RangeDecoder dec(bytes);
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t slot = dec.peek();
    const auto it = std::upper_bound(table.cum.begin(), table.cum.end(), slot);
    const auto idx = static_cast<std::size_t>(it - table.cum.begin()) - 1;
    dec.consume(table.cum[idx], table.freq[idx]);
    out[i] = table.vmin + static_cast<std::int32_t>(idx);
  }
  if (dec.consumed() != bytes.size())
    throw format_error("payload length mismatch: decoded " + std::to_string(dec.consumed()) + " of " +
                       std::to_string(bytes.size()) + " bytes");
  return out;
}

/// Ideal code length of `symbols` under `table`, in bits.
inline double cross_entropy_bits(std::span<const std::int32_t> symbols, const FreqTable& table) {
  double bits = 0;
  for (std::int32_t s : symbols)
    bits -= std::log2(static_cast<double>(table.frequency(s)) / static_cast<double>(kFreqTotal));
  return bits;
}

}  // namespace nvv
