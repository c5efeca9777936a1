#pragma once

#include <cmath>
#include <cstdint>

// Seeded, portable random streams. Replications derive independent streams
// from (seed, stream_id, replication) through a 64-bit avalanche mix, so the
// draw sequence is a pure function of those three integers on every platform:
// no std::random distributions, no global state, no thread dependence.

namespace ksrs {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer (Steele/Lea/Flood constants).
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

class RngStream {
 public:
  RngStream() : RngStream(0, 0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t replication = 0) {
    // splitmix64 walk from the avalanche mix of the three identifiers.
    std::uint64_t z = mix64(seed + kGolden);
    z = mix64(z ^ (mix64(stream_id + kGolden) + kGolden));
    z = mix64(z ^ (mix64(replication + kGolden) + kGolden));
    for (auto& word : state_) {
      z += kGolden;
      word = mix64(z);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = kGolden;
  }

  // xoshiro256++ (Blackman/Vigna).
  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Inverse-CDF exponential, -ln(1-U)/rate. U < 1 so the log argument is
  // never zero.
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

  // Number of unit-rate Poisson arrivals in [0, t): counts exponential
  // increments until they pass t.
  std::uint64_t poisson_count(double t) {
    std::uint64_t n = 0;
    double s = exponential(1.0);
    while (s < t) {
      ++n;
      s += exponential(1.0);
    }
    return n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

// Stream-id layout used by the experiment drivers: one experiment family per
// high word, one sweep point per low word. Replication index is passed
// separately so worker count never affects the draw sequence.
inline constexpr std::uint64_t stream_id(std::uint32_t family, std::uint32_t point = 0) {
  return (static_cast<std::uint64_t>(family) << 32) | point;
}

namespace streams {
inline constexpr std::uint32_t kSimulate = 1;
inline constexpr std::uint32_t kMm1 = 2;
inline constexpr std::uint32_t kPoissonLd = 3;
inline constexpr std::uint32_t kDrain = 4;
inline constexpr std::uint32_t kHoldsPolicy = 5;
inline constexpr std::uint32_t kHoldsOracle = 6;
inline constexpr std::uint32_t kCascade = 7;
inline constexpr std::uint32_t kTail = 8;
inline constexpr std::uint32_t kDriftValue = 9;
inline constexpr std::uint32_t kDriftStep = 10;
inline constexpr std::uint32_t kDriftBoundary = 11;
inline constexpr std::uint32_t kFluid = 12;
}  // namespace streams

}  // namespace ksrs
