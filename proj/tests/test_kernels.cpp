#include <doctest.h>

#include <random>
#include <vector>

#include "cascade/bitframe.hpp"
#include "cascade/kernels.hpp"
#include "cascade/permute.hpp"

using namespace cascade;

namespace {

BitFrame random_frame(uint64_t n, uint64_t seed) {
  BitFrame f(n);
  std::mt19937_64 rng(seed);
  for (auto& w : f.words()) w = rng();
  f.mask_tail();
  return f;
}

}  // namespace

TEST_CASE("parallel prefix parity is bit-identical to serial") {
  for (uint64_t n : {1ull, 63ull, 64ull, 65ull, 4096ull, 300000ull, 1048577ull}) {
    auto f = random_frame(n, n * 31 + 5);
    std::vector<uint64_t> a((n + 64) / 64, 0), b((n + 64) / 64, 0);
    kernels::prefix_parity_serial(f.words(), n, a);
    kernels::prefix_parity_parallel(f.words(), n, b);
    CAPTURE(n);
    REQUIRE(a == b);
  }
}

TEST_CASE("parallel hamming matches serial") {
  for (uint64_t n : {64ull, 1000ull, 500000ull}) {
    auto a = random_frame(n, 1);
    auto b = random_frame(n, 2);
    CHECK(kernels::hamming_serial(a.words(), b.words()) ==
          kernels::hamming_parallel(a.words(), b.words()));
  }
}

TEST_CASE("parallel gather matches serial") {
  for (uint64_t n : {100ull, 65536ull, 200001ull}) {
    auto src = random_frame(n, n);
    PermutationKey key(Seed128{42, 43}, 2, n);
    BitFrame a(n), b(n);
    kernels::permute_gather_serial(src, key, a);
    kernels::permute_gather_parallel(src, key, b);
    REQUIRE(a == b);
  }
}

TEST_CASE("gather applies the forward permutation") {
  uint64_t n = 1000;
  auto src = random_frame(n, 9);
  PermutationKey key(Seed128{7, 8}, 3, n);
  BitFrame out(n);
  kernels::permute_gather(src, key, out);
  for (uint64_t i = 0; i < n; i += 13)
    CHECK(out.get(key.forward(i)) == src.get(i));
}

TEST_CASE("identity gather copies") {
  uint64_t n = 777;
  auto src = random_frame(n, 4);
  PermutationKey key(Seed128{1, 2}, 1, n);  // round 1 = identity
  BitFrame out(n);
  kernels::permute_gather(src, key, out);
  CHECK(out == src);
}

TEST_CASE("seeded generation is deterministic and tail-masked") {
  uint64_t n = 1000;
  BitFrame a(n), b(n);
  kernels::random_words_serial(5, n, a.words());
  kernels::random_words_parallel(5, n, b.words());
  REQUIRE(a == b);
  a.mask_tail();
  REQUIRE(a == b);  // tail was already zero

  BitFrame m1(n), m2(n);
  kernels::bsc_mask_serial(17, 0.1, n, m1.words());
  kernels::bsc_mask_parallel(17, 0.1, n, m2.words());
  REQUIRE(m1 == m2);
}

TEST_CASE("bsc mask hits the target rate") {
  uint64_t n = 1 << 20;
  BitFrame m(n);
  kernels::bsc_mask(99, 0.1, n, m.words());
  uint64_t ones = kernels::hamming(m.words(), BitFrame(n).words());
  double rate = static_cast<double>(ones) / n;
  CHECK(rate > 0.095);
  CHECK(rate < 0.105);
}
