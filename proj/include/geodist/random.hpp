#pragma once

#include <cstdint>
#include <random>

namespace geodist {

/// SplitMix64 finalizer; used to derive independent stream seeds from (seed, stream).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Random engine for one deterministic stream. Randomized work is split into
/// fixed-size chunks, each with its own stream, so results do not depend on
/// the number of threads that process the chunks.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0) : engine_(stream_seed(seed, stream)) {}

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Points per RNG stream for chunked samplers.
inline constexpr long kRngChunk = 4096;

}  // namespace geodist
