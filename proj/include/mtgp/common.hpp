#ifndef MTGP_COMMON_HPP
#define MTGP_COMMON_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtgp {

struct NonSymmetric : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownParameter : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownTask : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyTask : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientPoints : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SizeGuardExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateTargets : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonPositiveVariance : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaVersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64: used to derive independent per-subject / per-restart seed streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0x6a09e667f3bcc909ULL + stream * 0x3c6ef372fe94f82bULL);
  return splitmix64(s);
}

// FNV-1a, used for artifact content hashes in run manifests.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Digamma via recurrence into the asymptotic regime plus the Stirling series.
// Accurate to ~1e-13 for x >= 1e-3.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number coefficients of the asymptotic expansion.
  double series = inv2 * (1.0 / 12.0 -
                  inv2 * (1.0 / 120.0 -
                  inv2 * (1.0 / 252.0 -
                  inv2 * (1.0 / 240.0 -
                  inv2 * (1.0 / 132.0 -
                  inv2 * (691.0 / 32760.0 -
                  inv2 * (1.0 / 12.0)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Shortest round-trip decimal printing; keeps dataset files bit-exact.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc()) throw IoError("cannot parse floating point value: " + s);
  return x;
}

}  // namespace mtgp

#endif
