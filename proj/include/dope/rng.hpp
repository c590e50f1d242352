#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dope {

// Named, splittable random streams. Each stream is keyed by a base seed plus
// an arbitrary list of labels/indices, mixed through SplitMix64 so that
// distinct (repeat, role) pairs never share a state sequence. Bit-level
// cross-platform stability is not a contract; within-build determinism is.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(engine_); }
  // inclusive range
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ v); }

inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Stream keyed by (seed, role, indices...). Distinct keys give independent streams.
inline RngStream make_stream(std::uint64_t seed, std::string_view role, std::uint64_t a = 0,
                             std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::mix(h, detail::hash_label(role));
  h = detail::mix(h, a);
  h = detail::mix(h, b);
  return RngStream(h);
}

}  // namespace dope
