#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace geofl {

/// Random stream used throughout the library. Every stochastic operation takes
/// one by reference so callers control seeding and can run independent
/// streams on separate threads.
using RandomStream = std::mt19937_64;

/// Tags that separate the sub-streams derived from one experiment seed.
enum class StreamTag : std::uint64_t {
  ue_placement = 1,
  point_process = 2,
  labeling = 3,
  binding = 4,
  clustering = 5,
  model_init = 6,
  selection = 7,
  local_training = 8,
  dataset = 9,
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31U);
}

/// Folds a base seed and a sequence of keys into one 64-bit seed. The result
/// depends on key order, so (seed, round 3, client 7) and (seed, 7, 3) differ.
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(base);
  for (const auto k : keys) {
    h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  }
  return h;
}

inline RandomStream make_stream(std::uint64_t base, StreamTag tag) {
  return RandomStream{derive_seed(base, {static_cast<std::uint64_t>(tag)})};
}

inline RandomStream make_stream(std::uint64_t base, StreamTag tag, std::uint64_t key) {
  return RandomStream{derive_seed(base, {static_cast<std::uint64_t>(tag), key})};
}

inline RandomStream make_stream(std::uint64_t base, StreamTag tag, std::uint64_t key1,
                                std::uint64_t key2) {
  return RandomStream{derive_seed(base, {static_cast<std::uint64_t>(tag), key1, key2})};
}

}  // namespace geofl
