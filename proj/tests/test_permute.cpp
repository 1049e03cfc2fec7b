#include <doctest.h>

#include <algorithm>
#include <stdexcept>
#include <numeric>
#include <random>
#include <vector>

#include "cascade/permute.hpp"

using namespace cascade;

TEST_CASE("round 1 is the identity by default") {
  PermutationKey k(Seed128{123, 456}, 1, 1000);
  for (uint64_t i = 0; i < 1000; i += 37) {
    CHECK(k.forward(i) == i);
    CHECK(k.inverse(i) == i);
  }
  PermutationKey k2(Seed128{123, 456}, 1, 1000, false);
  bool any_moved = false;
  for (uint64_t i = 0; i < 1000; ++i) any_moved |= k2.forward(i) != i;
  CHECK(any_moved);
}

TEST_CASE("n=16 image is exactly {0..15}") {
  PermutationKey k(Seed128{0xdeadbeef, 0xfeedface}, 2, 16);
  std::vector<uint64_t> image;
  for (uint64_t i = 0; i < 16; ++i) image.push_back(k.forward(i));
  std::sort(image.begin(), image.end());
  std::vector<uint64_t> expect(16);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(image == expect);
}

TEST_CASE("inverse undoes forward, exhaustively for small domains") {
  for (uint64_t n : {1ull, 2ull, 3ull, 5ull, 17ull, 100ull, 1000ull, 4096ull}) {
    for (uint32_t round : {2u, 3u, 7u}) {
      PermutationKey k(Seed128{n * 7 + round, 99}, round, n);
      std::vector<bool> seen(n, false);
      for (uint64_t i = 0; i < n; ++i) {
        uint64_t j = k.forward(i);
        REQUIRE(j < n);
        REQUIRE_FALSE(seen[j]);
        seen[j] = true;
        REQUIRE(k.inverse(j) == i);
      }
    }
  }
}

TEST_CASE("bijectivity at a million indices via seen-bitmap sweep") {
  uint64_t n = 1000000;
  PermutationKey k(Seed128{31337, 0}, 4, n);
  std::vector<bool> seen(n, false);
  for (uint64_t i = 0; i < n; ++i) {
    uint64_t j = k.forward(i);
    REQUIRE(j < n);
    REQUIRE_FALSE(seen[j]);
    seen[j] = true;
  }
  // Spot-check the inverse on random indices.
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10000; ++t) {
    uint64_t i = rng() % n;
    REQUIRE(k.inverse(k.forward(i)) == i);
  }
}

TEST_CASE("bijectivity over power-of-two and odd domains") {
  for (uint64_t n : {10ull, 1000ull, 1ull << 20}) {
    PermutationKey k(Seed128{n, n ^ 0xabcd}, 3, n);
    std::vector<bool> seen(n, false);
    for (uint64_t i = 0; i < n; ++i) {
      uint64_t j = k.forward(i);
      REQUIRE_FALSE(seen[j]);
      seen[j] = true;
    }
  }
}

TEST_CASE("equal keys map equally, different rounds differently") {
  uint64_t n = 100000;
  PermutationKey a(Seed128{5, 6}, 2, n);
  PermutationKey b(Seed128{5, 6}, 2, n);
  PermutationKey c(Seed128{5, 6}, 3, n);
  bool any_differs = false;
  for (uint64_t i = 0; i < n; i += 997) {
    CHECK(a.forward(i) == b.forward(i));
    any_differs |= a.forward(i) != c.forward(i);
  }
  CHECK(any_differs);
}

TEST_CASE("out-of-domain indices are rejected") {
  PermutationKey k(Seed128{1, 1}, 2, 10);
  CHECK_THROWS_AS(k.forward(10), std::out_of_range);
  CHECK_THROWS_AS(k.inverse(10), std::out_of_range);
}

TEST_CASE("permutation state is O(1)") {
  // The key must not materialize a table: its footprint is independent of n.
  CHECK(sizeof(PermutationKey) < 128);
}
