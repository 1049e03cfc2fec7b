#include "cascade/permute.hpp"

#include <bit>
#include <stdexcept>

#include "cascade/kernels.hpp"

namespace cascade {

namespace {
constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;
}

PermutationKey::PermutationKey(Seed128 seed, uint32_t round, uint64_t n,
                               bool identity_first_round)
    : n_(n), round_(round) {
  if (n == 0) throw std::invalid_argument("PermutationKey: empty domain");
  if (round == 0) throw std::invalid_argument("PermutationKey: rounds are 1-based");
  identity_ = identity_first_round && round == 1;

  // Feistel halves over the smallest power-of-two domain covering n.
  // Domains below 4 degenerate, so walk a 4-element domain instead.
  uint32_t bits = n <= 2 ? 2 : static_cast<uint32_t>(std::bit_width(n - 1));
  if (bits < 2) bits = 2;
  lo_bits_ = bits / 2;
  lo_mask_ = (uint64_t{1} << lo_bits_) - 1;
  hi_mask_ = (uint64_t{1} << (bits - lo_bits_)) - 1;

  uint64_t k = kernels::mix64(seed.hi ^ (uint64_t{round} * kGolden));
  k = kernels::mix64(k ^ seed.lo);
  for (auto& s : subkey_) {
    k = kernels::mix64(k + kGolden);
    s = k;
  }
}

uint64_t PermutationKey::encrypt(uint64_t x) const {
  uint64_t r = x & lo_mask_;
  uint64_t l = x >> lo_bits_;
  l = (l + kernels::mix64(r ^ subkey_[0])) & hi_mask_;
  r = (r + kernels::mix64(l ^ subkey_[1])) & lo_mask_;
  l = (l + kernels::mix64(r ^ subkey_[2])) & hi_mask_;
  r = (r + kernels::mix64(l ^ subkey_[3])) & lo_mask_;
  return (l << lo_bits_) | r;
}

uint64_t PermutationKey::decrypt(uint64_t x) const {
  uint64_t r = x & lo_mask_;
  uint64_t l = x >> lo_bits_;
  r = (r - kernels::mix64(l ^ subkey_[3])) & lo_mask_;
  l = (l - kernels::mix64(r ^ subkey_[2])) & hi_mask_;
  r = (r - kernels::mix64(l ^ subkey_[1])) & lo_mask_;
  l = (l - kernels::mix64(r ^ subkey_[0])) & hi_mask_;
  return (l << lo_bits_) | r;
}

uint64_t PermutationKey::forward(uint64_t i) const {
  if (i >= n_) throw std::out_of_range("PermutationKey::forward: index >= n");
  if (identity_) return i;
  uint64_t x = i;
  do {
    x = encrypt(x);
  } while (x >= n_);
  return x;
}

uint64_t PermutationKey::inverse(uint64_t j) const {
  if (j >= n_) throw std::out_of_range("PermutationKey::inverse: index >= n");
  if (identity_) return j;
  uint64_t x = j;
  do {
    x = decrypt(x);
  } while (x >= n_);
  return x;
}

}  // namespace cascade
