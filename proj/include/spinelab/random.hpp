#ifndef SPINELAB_RANDOM_HPP
#define SPINELAB_RANDOM_HPP

// Counter-based random streams.
//
// Every draw is a pure function of (seed, replicate, particle id, substream,
// draw index), so a replicate's output never depends on which worker ran it
// or in which order particles were processed.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace spinelab {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMulA = 0xD2511F53u;
  static constexpr std::uint32_t kMulB = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeylA = 0x9E3779B9u;
  static constexpr std::uint32_t kWeylB = 0xBB67AE85u;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeylA;
        key[1] += kWeylB;
      }
      const std::uint64_t p0 = std::uint64_t{kMulA} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMulB} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Identifier of the initial ancestor's stream.
inline constexpr std::uint64_t kRootParticleId = 0x5EED'0000'0000'0001ull;

/// Stream id of the i-th child (1-based) of a particle.
constexpr std::uint64_t child_particle_id(std::uint64_t parent, std::uint32_t child_index) {
  return splitmix64(parent ^ splitmix64(0xC411D000ull + child_index));
}

/// Key shared by all streams of one replicate.
struct StreamKey {
  std::uint64_t value = 0;

  static constexpr StreamKey from(std::uint64_t seed, std::uint64_t replicate) {
    return StreamKey{splitmix64(splitmix64(seed) ^ (replicate * 0xA24BAED4963EE407ull + 1))};
  }
};

/// Sequential draws from one (key, particle, substream) triple.
class RandomStream {
 public:
  RandomStream(StreamKey key, std::uint64_t particle_id, std::uint32_t substream = 0)
      : key_{static_cast<std::uint32_t>(key.value), static_cast<std::uint32_t>(key.value >> 32)},
        ctr_{0u, substream, static_cast<std::uint32_t>(particle_id),
             static_cast<std::uint32_t>(particle_id >> 32)} {}

  std::uint32_t next_u32() {
    if (used_ == 4) {
      block_ = Philox4x32::generate(ctr_, key_);
      ++ctr_[0];
      used_ = 0;
    }
    return block_[used_++];
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /// Standard normal by Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  Philox4x32::Key key_;
  Philox4x32::Counter ctr_;
  Philox4x32::Counter block_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace spinelab

#endif  // SPINELAB_RANDOM_HPP
