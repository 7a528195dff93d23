#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace eki {

// Counter-based randomness: Philox 4x32-10. Every 128-bit counter block maps
// to 128 random bits under a 64-bit key with no sequential state, so each
// (replicate, particle) pair gets its own reproducible stream and replicates
// can run on any number of threads with identical results.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                          std::array<uint32_t, 2> key) {
  constexpr uint32_t kMul0 = 0xD2511F53u;
  constexpr uint32_t kMul1 = 0xCD9E8D57u;
  constexpr uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = static_cast<uint64_t>(kMul0) * ctr[0];
    const uint64_t p1 = static_cast<uint64_t>(kMul1) * ctr[2];
    const std::array<uint32_t, 4> next = {
        static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
        static_cast<uint32_t>(p1),
        static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
        static_cast<uint32_t>(p0)};
    ctr = next;
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

// Stream ids keep purposes, replicates and particles apart:
// 8 tag bits | 28 replicate bits | 28 particle bits.
constexpr uint64_t stream_id(uint64_t tag, uint64_t replicate, uint64_t particle) {
  return (tag << 56) | ((replicate & 0xFFFFFFFull) << 28) |
         (particle & 0xFFFFFFFull);
}

// Sequential view of one stream: uniforms in (0,1) and standard normals via
// Box-Muller, two per uniform pair.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : stream_(stream) {
    const uint64_t k = splitmix64(seed);
    key_ = {static_cast<uint32_t>(k), static_cast<uint32_t>(k >> 32)};
  }

  double uniform() {
    if (lane_ == 0) {
      block_bits_ = philox4x32(
          {static_cast<uint32_t>(block_), static_cast<uint32_t>(block_ >> 32),
           static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)},
          key_);
      ++block_;
    }
    const uint64_t hi = block_bits_[2 * lane_];
    const uint64_t lo = block_bits_[2 * lane_ + 1];
    lane_ = 1 - lane_;
    const uint64_t bits = (hi << 32) | lo;
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * M_PI * u2;
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

 private:
  std::array<uint32_t, 2> key_{};
  uint64_t stream_ = 0;
  uint64_t block_ = 0;
  std::array<uint32_t, 4> block_bits_{};
  int lane_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eki
