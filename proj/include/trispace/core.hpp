#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace trispace {

/// Thrown when a caller violates an operation's preconditions (bad flags,
/// malformed config). CLI maps this to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when input data cannot be consumed (bad header, missing file,
/// invalid values). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a computation fails at runtime (divergence, internal
/// inconsistency). CLI maps this to exit code 3.
struct ComputeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  const double* row(std::size_t i) const { return a.data() + i * cols; }
  double* row(std::size_t i) { return a.data() + i * cols; }
};

/// Dense sequence tensor, laid out [n][step][channel].
struct SeqTensor {
  std::size_t n = 0;
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::vector<double> a;

  SeqTensor() = default;
  SeqTensor(std::size_t n_, std::size_t m_, std::size_t f_, double fill = 0.0)
      : n(n_), steps(m_), channels(f_), a(n_ * m_ * f_, fill) {}

  double& at(std::size_t i, std::size_t t, std::size_t f) {
    return a[(i * steps + t) * channels + f];
  }
  double at(std::size_t i, std::size_t t, std::size_t f) const {
    return a[(i * steps + t) * channels + f];
  }

  /// Pointer to the flattened steps*channels block of sequence i.
  const double* flat(std::size_t i) const { return a.data() + i * steps * channels; }
  double* flat(std::size_t i) { return a.data() + i * steps * channels; }
  std::size_t flat_size() const { return steps * channels; }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// splitmix64; used to derive independent sub-seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic sub-seed for a named stream of a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& stream) {
  std::uint64_t s = master ^ fnv1a64(stream);
  return splitmix64(s);
}

inline std::mt19937_64 make_rng(std::uint64_t master, const std::string& stream) {
  return std::mt19937_64(derive_seed(master, stream));
}

/// Shortest representation that round-trips a double exactly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  double back = std::strtod(buf, nullptr);
  if (back == x) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, x);
      if (std::strtod(shorter, nullptr) == x) return std::string(shorter);
    }
  }
  return std::string(buf);
}

}  // namespace trispace
