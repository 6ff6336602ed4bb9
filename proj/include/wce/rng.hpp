#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wce {

// Counter-based Gaussian source: every draw is a pure function of
// (seed, stream, a, b, c), so results do not depend on evaluation order.
namespace rng {

// Domain-separation tags so different consumers never share draws.
enum class Stream : std::uint64_t {
  brownian = 0x62726f776e69616eULL,
  ensemble_prior = 0x7072696f72000000ULL,
  ensemble_forecast = 0x666f726563617374ULL,
  observation = 0x6f62736572766521ULL,
  initial_field = 0x6368693000000000ULL,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t key(std::uint64_t seed, Stream stream, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) {
  std::uint64_t h = splitmix64(seed ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x85157af5a4e2a3c7ULL));
  return h;
}

// Uniform on the open interval (0, 1).
inline double uniform(std::uint64_t k) {
  return (static_cast<double>(splitmix64(k) >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, Stream stream, std::uint64_t a, std::uint64_t b,
                      std::uint64_t c) {
  return uniform(key(seed, stream, a, b, c));
}

// Box-Muller on two decorrelated uniforms derived from one key.
inline double normal(std::uint64_t seed, Stream stream, std::uint64_t a, std::uint64_t b,
                     std::uint64_t c) {
  const std::uint64_t k = key(seed, stream, a, b, c);
  const double u1 = uniform(k);
  const double u2 = uniform(k ^ 0xd1b54a32d192ed03ULL);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng
}  // namespace wce
