#pragma once

#include <array>
#include <cstdint>

namespace cascade {

// Session seed shared by both parties; the only permutation state that is
// ever stored or sent.
struct Seed128 {
  uint64_t lo = 0;
  uint64_t hi = 0;
  bool operator==(const Seed128&) const = default;
};

// Deterministic invertible permutation on {0..n-1}, derived entirely from
// (seed, round, n). A four-step keyed Feistel network over the smallest
// power-of-two domain covering n, restricted to {0..n-1} by cycle walking
// (repeatedly re-encrypting until the value lands in range; see Black &
// Rogaway, "Ciphers with Arbitrary Finite Domains"). State is O(1) per key;
// no index table is ever materialized.
//
// Not cryptographic: the permutations only need to decorrelate positions
// between rounds.
class PermutationKey {
 public:
  // round is 1-based. With identity_first_round (the default), round 1 maps
  // every index to itself; the input frame is already in random order with
  // respect to the error positions.
  PermutationKey(Seed128 session_seed, uint32_t round, uint64_t n,
                 bool identity_first_round = true);

  uint64_t forward(uint64_t i) const;   // pi(i)
  uint64_t inverse(uint64_t j) const;   // pi^-1(j)

  uint64_t domain_size() const { return n_; }
  uint32_t round() const { return round_; }
  bool is_identity() const { return identity_; }

 private:
  uint64_t encrypt(uint64_t x) const;
  uint64_t decrypt(uint64_t x) const;

  uint64_t n_ = 0;
  uint32_t round_ = 0;
  bool identity_ = false;
  uint32_t lo_bits_ = 0;
  uint64_t lo_mask_ = 0;
  uint64_t hi_mask_ = 0;
  std::array<uint64_t, 4> subkey_{};
};

}  // namespace cascade
