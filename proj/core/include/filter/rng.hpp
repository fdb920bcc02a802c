#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace filter {

// Deterministic PRNG stack. std::mt19937 plus the standard distributions are
// implementation-defined, so every draw that ends up in an artifact goes
// through these instead. splitmix64 expands seeds, xoshiro256** generates.

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

class Xoshiro256StarStar {
 public:
  explicit Xoshiro256StarStar(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& word : state_) word = sm.next();
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) using the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is negligible for our n << 2^64
  // and keeps the mapping trivially portable.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  std::uint64_t range(std::uint64_t lo, std::uint64_t hi_inclusive) {
    return lo + below(hi_inclusive - lo + 1);
  }

  // Fisher-Yates with our own bounded draw so the permutation is identical
  // on every platform.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_;
};

// One root seed fans out into independent per-purpose streams: the n-th
// stream is seeded by the n-th splitmix64 output of the root.
class SeedSequence {
 public:
  explicit SeedSequence(std::uint64_t root_seed) : sm_(root_seed) {}

  std::uint64_t next_seed() { return sm_.next(); }

  Xoshiro256StarStar next_stream() { return Xoshiro256StarStar(next_seed()); }

 private:
  SplitMix64 sm_;
};

}  // namespace filter
