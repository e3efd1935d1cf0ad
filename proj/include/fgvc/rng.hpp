#pragma once

#include <cstdint>

namespace fgvc {

// Deterministic 64-bit generator: SplitMix64 expands the seed into the
// initial state, xorshift64* produces the output stream.  Identical seeds
// give identical sequences on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    state_ = mix(seed);
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ull;
  }

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1Dull;
  }

  // Uniform double in [0, 1).
  double uniform_f64() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform_f64();
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform_f64() * static_cast<double>(n)) % n;
  }

  // Independent child stream; depends only on the original seed and the
  // stream id, never on how many draws were taken from this generator.
  Rng split(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ (0xA02BDBF7BB3C0A7ull * (stream + 1))));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace fgvc
