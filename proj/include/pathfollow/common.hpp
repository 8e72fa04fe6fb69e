#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pathfollow {

inline constexpr std::string_view kToolVersion = "0.3.0";
inline constexpr double kPi = std::numbers::pi;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  /// Short machine-readable tag ("integration-diverged", "parse", ...).
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid-argument", what) {}
};

class IntegrationDiverged : public Error {
 public:
  explicit IntegrationDiverged(const std::string& what) : Error("integration-diverged", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double theta) {
  double r = std::remainder(theta, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

inline double clamp_finite(double x, double lo, double hi) {
  if (!std::isfinite(x)) return lo <= 0.0 && 0.0 <= hi ? 0.0 : lo;
  return x < lo ? lo : (x > hi ? hi : x);
}

// ---------------------------------------------------------------------------
// Randomness. Everything random is derived from a root seed through named
// sub-streams, so adding a consumer never shifts the draws of another one.
// Distributions are implemented here (not <random>'s) so that results are
// identical across standard library implementations.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Seeded generator. The engine sequence is fixed by the standard; the
/// mappings to doubles and integers below are fixed here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Sub-stream `name`/`index` of the root `seed`.
  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(seed ^ fnv1a64(name));
    return Rng(h + splitmix64(index + 0x51ED27ull));
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("Rng::below: empty range");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  bool coin() { return (next() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace pathfollow
