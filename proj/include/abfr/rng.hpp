#pragma once

#include <array>
#include <cstdint>

namespace abfr {

// xoshiro256++ seeded through SplitMix64. All sampling in the pipeline draws
// from this generator so runs are reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [lo, hi], inclusive, without modulo bias.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);
  // Standard normal via Box-Muller.
  double normal();

  static std::uint64_t splitmix64(std::uint64_t& state);
  // Derives an independent stream seed from (seed, stream id).
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace abfr
