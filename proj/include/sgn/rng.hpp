#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

#include "sgn/core.hpp"

namespace sgn {

/// Counter-based generator.
///
/// Draw i of a stream with key k is `mix64(k + (i + 1) * 0x9E3779B97F4A7C15)`, where
/// mix64 is the SplitMix64 finalizer and k = mix64(seed). The output depends only on
/// (seed, i), so streams are bit-identical on every platform with 64-bit unsigned
/// arithmetic. Normals use the Marsaglia polar method; the second variate of each
/// accepted pair is cached and returned by the next call.
class Rng {
public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool has_spare = false;
    double spare = 0.0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0) : state_{mix64(seed), 0, false, 0.0} {}

  static Rng from_state(const State& s) {
    Rng r;
    r.state_ = s;
    return r;
  }

  const State& state() const noexcept { return state_; }

  static constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t next_u64() noexcept {
    ++state_.counter;
    return mix64(state_.key + state_.counter * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
  }

  double normal() noexcept {
    if (state_.has_spare) {
      state_.has_spare = false;
      return state_.spare;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    state_.spare = v * f;
    state_.has_spare = true;
    return u * f;
  }

  Vector standard_normal(std::size_t n) {
    Vector out(n);
    for (auto& x : out) x = normal();
    return out;
  }

  /// Independent child stream; `split(i)` is a pure function of (key, i).
  Rng split(std::uint64_t stream) const noexcept {
    Rng child;
    child.state_.key = mix64(state_.key ^ mix64(stream + 0x632BE59BD9B4E019ULL));
    return child;
  }

private:
  State state_{};
};

/// n i.i.d. standard-normal draws.
inline Vector rng_standard_normal(Rng& rng, std::size_t n) { return rng.standard_normal(n); }

}  // namespace sgn
