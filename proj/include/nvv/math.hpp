#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nvv {

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  constexpr T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(Vec3 a, T s) { return {a.x * s, a.y * s, a.z * s}; }
  friend constexpr Vec3 operator*(T s, Vec3 a) { return a * s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

  template <class U>
  constexpr Vec3<U> cast() const {
    return {static_cast<U>(x), static_cast<U>(y), static_cast<U>(z)};
  }
};

template <class T>
constexpr T dot(Vec3<T> a, Vec3<T> b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Vec3<T> cross(Vec3<T> a, Vec3<T> b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
T norm(Vec3<T> a) {
  return std::sqrt(dot(a, a));
}

template <class T>
Vec3<T> normalized(Vec3<T> a) {
  return a * (T(1) / norm(a));
}

/// Engine shared by every stochastic step. mt19937_64 is fully specified by
/// the standard, and the conversions below avoid the implementation-defined
/// std::uniform_real_distribution, so seeded runs reproduce bit-exactly.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fills `out` with uniform values in [-0.5, 0.5). Two 24-bit draws are cut
/// from each engine output.
template <class T, class Span>
void fill_uniform_noise(Rng& rng, Span&& out) {
  const std::size_t n = out.size();
  std::size_t i = 0;
  for (; i + 1 < n; i += 2) {
    const std::uint64_t bits = rng();
    out[i] = static_cast<T>(static_cast<double>(bits >> 40) * 0x1.0p-24 - 0.5);
    out[i + 1] = static_cast<T>(static_cast<double>((bits >> 8) & 0xFFFFFFu) * 0x1.0p-24 - 0.5);
  }
  if (i < n) out[i] = static_cast<T>(static_cast<double>(rng() >> 40) * 0x1.0p-24 - 0.5);
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// log(1 + e^x) without overflow.
template <class T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace nvv
