#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace diffe {

inline constexpr std::uint32_t kFormatVersion = 1;

// Error taxonomy. Everything thrown by the library derives from Error so
// callers can catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class TrainingError : public Error {
 public:
  using Error::Error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class MetricError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a label, so every
// consumer of randomness (init, split, noise, ...) owns a named stream and
// the overall run stays reproducible when one consumer changes its draw count.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(seed ^ h);
}

// Deterministic RNG. Transforms are written out explicitly instead of using
// std::*_distribution, whose output sequences are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : engine_(stream_seed(seed, stream)) {}

  std::uint64_t raw() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return std::ldexp(static_cast<double>(engine_() >> 11), -53); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal, Box-Muller with a cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // uniform integer in [lo, hi], inclusive, rejection-sampled to stay unbiased
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v = 0;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace detail {

inline bool is_little_endian() {
  const std::uint16_t probe = 0x1;
  unsigned char byte0 = 0;
  std::memcpy(&byte0, &probe, 1);
  return byte0 == 1;
}

template <typename T>
void swap_bytes(T& v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  std::memcpy(&v, buf, sizeof(T));
}

// All on-disk multi-byte values are little-endian.
template <typename T>
void write_le(std::ostream& out, T value) {
  if (!is_little_endian()) swap_bytes(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  if (!out) throw IoError("binary write failed");
}

template <typename T>
void read_le(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("file truncated while reading");
  if (!is_little_endian()) swap_bytes(value);
}

template <typename T>
void write_le_array(std::ostream& out, const T* data, std::size_t count) {
  if (is_little_endian()) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    if (!out) throw IoError("binary write failed");
    return;
  }
  for (std::size_t i = 0; i < count; ++i) write_le(out, data[i]);
}

template <typename T>
void read_le_array(std::istream& in, T* data, std::size_t count) {
  if (is_little_endian()) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw FormatError("file truncated while reading array");
    return;
  }
  for (std::size_t i = 0; i < count; ++i) read_le(in, data[i]);
}

}  // namespace detail

}  // namespace diffe
