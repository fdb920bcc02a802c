#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "filter/rng.hpp"

using namespace filter;

TEST_CASE("same seed, same stream") {
  Xoshiro256StarStar a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("different seeds diverge") {
  Xoshiro256StarStar a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (a.next() == b.next());
  CHECK(same == 0);
}

TEST_CASE("uniform stays in bounds") {
  Xoshiro256StarStar rng(5);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(lo < 0.05);
  CHECK(hi > 0.95);

  for (int i = 0; i < 1000; ++i) {
    double v = rng.uniform(-2.0, 3.0);
    CHECK(v >= -2.0);
    CHECK(v < 3.0);
  }
}

TEST_CASE("below and range respect their bounds") {
  Xoshiro256StarStar rng(11);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) ++seen[rng.below(7)];
  for (int count : seen) CHECK(count > 700);
  for (int i = 0; i < 1000; ++i) {
    auto v = rng.range(3, 5);
    CHECK(v >= 3);
    CHECK(v <= 5);
  }
}

TEST_CASE("shuffle is a permutation and is seed-stable") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  Xoshiro256StarStar rng(42);
  rng.shuffle(v);
  CHECK(v != w);  // 20! makes identity astronomically unlikely
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == w);

  std::vector<int> v2(20);
  std::iota(v2.begin(), v2.end(), 0);
  Xoshiro256StarStar rng2(42);
  rng2.shuffle(v2);
  CHECK(v == v2);
}

TEST_CASE("seed sequence fans out reproducibly") {
  SeedSequence a(7), b(7);
  auto s1 = a.next_seed();
  auto s2 = a.next_seed();
  CHECK(s1 != s2);
  CHECK(b.next_seed() == s1);
  CHECK(b.next_seed() == s2);

  SeedSequence c(7);
  auto stream = c.next_stream();
  CHECK(stream.next() == Xoshiro256StarStar(s1).next());
}

TEST_CASE("splitmix64 reference vector") {
  // First three outputs for seed 1234567, cross-checked against the
  // published reference implementation.
  SplitMix64 sm(1234567);
  CHECK(sm.next() == 6457827717110365317ULL);
  CHECK(sm.next() == 3203168211198807973ULL);
  CHECK(sm.next() == 9817491932198370423ULL);
}
