#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ivbandit {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/**
 * A seeded stream of uniform variates.
 *
 * Streams are split deterministically: `derive(base, {a, b, ...})` hashes the
 * key path with SplitMix64, so two streams with the same path produce the same
 * sequence on every platform and in every thread schedule. All variates are
 * produced from raw 64-bit words so the consumption count per draw never
 * depends on the standard library's distribution implementations.
 */
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(detail::splitmix64(seed)) {}

  static RngStream derive(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = detail::splitmix64(base);
    for (std::uint64_t key : path) h = detail::splitmix64(h ^ detail::splitmix64(key + 1));
    return RngStream(h);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  int uniform_index(int n) {
    const auto k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ivbandit
