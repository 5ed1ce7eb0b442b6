#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gser {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic substream RNG: the stream identity is (seed, tag sequence),
// so work parallelized over (slab, encoding, dwi, ...) indices draws the same
// numbers regardless of scheduling or thread count.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    eng_.seed(h);
  }

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }
  std::uint64_t bits() { return eng_(); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace gser
