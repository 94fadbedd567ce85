#pragma once

#include <cmath>
#include <cstdint>

namespace driftsens {

/// SplitMix64 step. Serves both as the per-stream generator and as the mixer
/// for deriving child stream seeds.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based sub-stream derivation: the seed of stream `index` is a pure
/// function of (master, index). Paths seeded this way form the same sample
/// set no matter how work is scheduled across threads.
inline std::uint64_t derive_stream(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0xA3EC647659359ACDull + index * 0x9E3779B97F4A7C15ull);
  const std::uint64_t a = splitmix64_next(s);
  const std::uint64_t b = splitmix64_next(s);
  return a ^ (b >> 1);
}

/// Deterministic scalar stream for one path. Normal draws use Box-Muller with
/// exactly two uniforms per draw, so the k-th normal of a stream depends only
/// on the seed and k.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform on (0, 1]; never 0, so log() below is safe.
  double next_uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double next_normal() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    constexpr double two_pi = 6.28318530717958647692528676655900577;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace driftsens
