#pragma once

#include <cstdint>
#include <string_view>

namespace prefpipe {

// SplitMix64. Chosen because the sequence is fully determined by the seed
// and reproducible in any language without a library.
struct Rng {
  std::uint64_t state = 0;

  Rng() = default;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1): top 53 bits of the output.
  double next_uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }
};

// FNV-1a over raw bytes, 64-bit variant.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream for a pipeline stage or record: one base seed governs
// a whole run, sub-streams are keyed by a fixed tag plus an index.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t index = 0) {
  Rng r(base ^ fnv1a64(tag) ^ (index * 0x9E3779B97F4A7C15ULL));
  return r.next();
}

}  // namespace prefpipe
