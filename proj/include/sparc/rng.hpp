#pragma once

#include <cstdint>

namespace sparc {

// SplitMix64. Chosen for fixtures because its output is fully specified by
// a handful of integer operations, so any implementation reproduces it.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [-scale, scale).
  double next_symmetric(double scale) { return scale * (2.0 * next_unit() - 1.0); }

 private:
  std::uint64_t state_;
};

}  // namespace sparc
