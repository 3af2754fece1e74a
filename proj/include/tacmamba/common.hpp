#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tacmamba {

// Error taxonomy. The CLI maps these to distinct exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};
// Shape / dimension mismatches between arguments.
struct ShapeError : Error {
  using Error::Error;
};
// File system problems (missing file, short write).
struct IoError : Error {
  using Error::Error;
};
// Corrupt or truncated on-disk data; carries the byte offset of the failure.
struct ParseError : Error {
  std::uint64_t offset;
  ParseError(const std::string& msg, std::uint64_t off)
      : Error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};
// Configuration document violates the documented schema.
struct SchemaError : Error {
  using Error::Error;
};
// File format version this build does not understand.
struct VersionError : Error {
  using Error::Error;
};
// Operation invoked in a state that cannot serve it.
struct StateError : Error {
  using Error::Error;
};

// Dense row-major tensor. Rank is dynamic; most uses are rank 1 or 2.
template <typename R>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<R> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), R(0));
  }
  Tensor(std::vector<std::int64_t> s, std::vector<R> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<std::int64_t>(v.size()) != numel_of(shape))
      throw ShapeError("tensor data size does not match shape");
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  R* data() { return v.data(); }
  const R* data() const { return v.data(); }
};

template <typename R>
inline bool all_finite(const R* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

template <typename R>
inline void require_finite(const R* p, std::size_t n, const char* what) {
  if (!all_finite(p, n)) throw NumericError(std::string(what) + ": non-finite value");
}

// FNV-1a over raw bytes; used for snapshot payload checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <typename R>
inline R median_of(std::vector<R> xs) {
  if (xs.empty()) throw StateError("median of empty set");
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return (n % 2 == 1) ? xs[n / 2] : static_cast<R>((xs[n / 2 - 1] + xs[n / 2]) / R(2));
}

template <typename R>
inline R percentile_of(std::vector<R> xs, double q) {
  if (xs.empty()) throw StateError("percentile of empty set");
  std::sort(xs.begin(), xs.end());
  double idx = q * static_cast<double>(xs.size() - 1);
  std::size_t lo = static_cast<std::size_t>(idx);
  std::size_t hi = lo + 1 < xs.size() ? lo + 1 : lo;
  double frac = idx - static_cast<double>(lo);
  return static_cast<R>(xs[lo] * (1.0 - frac) + xs[hi] * frac);
}

}  // namespace tacmamba
