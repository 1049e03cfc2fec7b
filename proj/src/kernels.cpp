#include "cascade/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cascade/bitframe.hpp"
#include "cascade/permute.hpp"

namespace cascade::kernels {

namespace {

std::atomic<int> g_max_threads{0};

int threads_for(uint64_t work_items) {
#ifdef _OPENMP
  int t = g_max_threads.load(std::memory_order_relaxed);
  if (t <= 0) t = omp_get_max_threads();
  // Not worth forking a team for small inputs.
  if (work_items < (1u << 14)) return 1;
  return t;
#else
  (void)work_items;
  return 1;
#endif
}

// Inclusive XOR scan within a word: bit b of the result is the XOR of input
// bits 0..b.
inline uint64_t xor_scan64(uint64_t x) {
  x ^= x << 1;
  x ^= x << 2;
  x ^= x << 4;
  x ^= x << 8;
  x ^= x << 16;
  x ^= x << 32;
  return x;
}

// Scans frame words [w0, w1) given the parity of everything before w0 and
// writes prefix bits into out. Word j receives prefix bits 64j .. 64j+63;
// the carry-out word (holding prefix bit 64*w1) is written only when
// write_tail is set, so adjacent chunks never touch the same output word.
void scan_range(std::span<const uint64_t> frame, std::span<uint64_t> out,
                uint64_t w0, uint64_t w1, bool carry_in, bool write_tail) {
  uint64_t carry = carry_in ? ~uint64_t{0} : 0;
  for (uint64_t j = w0; j < w1; ++j) {
    uint64_t t = xor_scan64(frame[j]) ^ carry;
    out[j] = (t << 1) | (carry & 1);
    carry = (t >> 63) ? ~uint64_t{0} : 0;
  }
  if (write_tail && w1 < static_cast<uint64_t>(out.size())) out[w1] = carry & 1;
}

bool range_parity(std::span<const uint64_t> frame, uint64_t w0, uint64_t w1) {
  uint64_t acc = 0;
  for (uint64_t j = w0; j < w1; ++j) acc ^= frame[j];
  return std::popcount(acc) & 1;
}

inline void mask_out_tail(std::span<uint64_t> out, uint64_t nbits) {
  if (nbits % 64 != 0) out[out.size() - 1] &= (uint64_t{1} << (nbits % 64)) - 1;
}

}  // namespace

void set_max_threads(int t) { g_max_threads.store(t, std::memory_order_relaxed); }

int max_threads() {
  int t = g_max_threads.load(std::memory_order_relaxed);
#ifdef _OPENMP
  if (t <= 0) t = omp_get_max_threads();
#else
  if (t <= 0) t = 1;
#endif
  return t;
}

uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

uint64_t splitmix_at(uint64_t seed, uint64_t index) {
  return mix64(seed + (index + 1) * 0x9e3779b97f4a7c15ull);
}

// --- prefix parity -------------------------------------------------------

void prefix_parity_serial(std::span<const uint64_t> frame, uint64_t n,
                          std::span<uint64_t> out) {
  if (n == 0) {
    out[0] = 0;
    return;
  }
  scan_range(frame, out, 0, (n + 63) / 64, false, true);
  mask_out_tail(out, n + 1);
}

void prefix_parity_parallel(std::span<const uint64_t> frame, uint64_t n,
                            std::span<uint64_t> out) {
#ifndef _OPENMP
  prefix_parity_serial(frame, n, out);
#else
  if (n == 0) {
    out[0] = 0;
    return;
  }
  uint64_t words = (n + 63) / 64;
  constexpr uint64_t kChunkWords = 1 << 12;
  uint64_t chunks = (words + kChunkWords - 1) / kChunkWords;
  if (chunks < 2) {
    scan_range(frame, out, 0, words, false, true);
    mask_out_tail(out, n + 1);
    return;
  }

  std::vector<uint8_t> carry(chunks + 1, 0);
#pragma omp parallel for num_threads(threads_for(words)) schedule(static)
  for (int64_t c = 0; c < static_cast<int64_t>(chunks); ++c) {
    uint64_t w0 = c * kChunkWords;
    uint64_t w1 = std::min(words, w0 + kChunkWords);
    carry[c + 1] = range_parity(frame, w0, w1);
  }
  for (uint64_t c = 1; c <= chunks; ++c) carry[c] ^= carry[c - 1];

#pragma omp parallel for num_threads(threads_for(words)) schedule(static)
  for (int64_t c = 0; c < static_cast<int64_t>(chunks); ++c) {
    uint64_t w0 = c * kChunkWords;
    uint64_t w1 = std::min(words, w0 + kChunkWords);
    // Only the last chunk writes its carry-out word; for the others that bit
    // is the next chunk's carry-in and is written there.
    scan_range(frame, out, w0, w1, carry[c],
               c + 1 == static_cast<int64_t>(chunks));
  }
  mask_out_tail(out, n + 1);
#endif
}

void prefix_parity(std::span<const uint64_t> frame, uint64_t n,
                   std::span<uint64_t> out) {
  if (threads_for(frame.size()) > 1)
    prefix_parity_parallel(frame, n, out);
  else
    prefix_parity_serial(frame, n, out);
}

// --- hamming distance ----------------------------------------------------

uint64_t hamming_serial(std::span<const uint64_t> a, std::span<const uint64_t> b) {
  uint64_t d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

uint64_t hamming_parallel(std::span<const uint64_t> a, std::span<const uint64_t> b) {
#ifndef _OPENMP
  return hamming_serial(a, b);
#else
  uint64_t d = 0;
  int64_t nw = static_cast<int64_t>(a.size());
#pragma omp parallel for num_threads(threads_for(a.size())) schedule(static) \
    reduction(+ : d)
  for (int64_t i = 0; i < nw; ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
#endif
}

uint64_t hamming(std::span<const uint64_t> a, std::span<const uint64_t> b) {
  return threads_for(a.size()) > 1 ? hamming_parallel(a, b) : hamming_serial(a, b);
}

// --- permuted gather -----------------------------------------------------

namespace {

inline uint64_t gather_word(const BitFrame& src, const PermutationKey& key,
                            uint64_t word_index, uint64_t n) {
  uint64_t w = 0;
  uint64_t base = word_index * 64;
  uint64_t hi = std::min<uint64_t>(64, n - base);
  auto words = src.words();
  for (uint64_t b = 0; b < hi; ++b) {
    uint64_t s = key.inverse(base + b);
    w |= ((words[s / 64] >> (s % 64)) & 1) << b;
  }
  return w;
}

}  // namespace

void permute_gather_serial(const BitFrame& src, const PermutationKey& key,
                           BitFrame& out) {
  uint64_t n = src.size();
  if (key.is_identity()) {
    std::memcpy(out.words().data(), src.words().data(),
                src.word_count() * sizeof(uint64_t));
    return;
  }
  auto ow = out.words();
  for (uint64_t j = 0; j < out.word_count(); ++j)
    ow[j] = gather_word(src, key, j, n);
}

void permute_gather_parallel(const BitFrame& src, const PermutationKey& key,
                             BitFrame& out) {
#ifndef _OPENMP
  permute_gather_serial(src, key, out);
#else
  uint64_t n = src.size();
  if (key.is_identity()) {
    std::memcpy(out.words().data(), src.words().data(),
                src.word_count() * sizeof(uint64_t));
    return;
  }
  auto ow = out.words();
  int64_t nw = static_cast<int64_t>(out.word_count());
#pragma omp parallel for num_threads(threads_for(n)) schedule(static)
  for (int64_t j = 0; j < nw; ++j) ow[j] = gather_word(src, key, j, n);
#endif
}

void permute_gather(const BitFrame& src, const PermutationKey& key,
                    BitFrame& out) {
  if (threads_for(src.size()) > 1)
    permute_gather_parallel(src, key, out);
  else
    permute_gather_serial(src, key, out);
}

// --- seeded generation ---------------------------------------------------

void random_words_serial(uint64_t seed, uint64_t n, std::span<uint64_t> out) {
  for (uint64_t j = 0; j < out.size(); ++j) out[j] = splitmix_at(seed, j);
  mask_out_tail(out, n);
}

void random_words_parallel(uint64_t seed, uint64_t n, std::span<uint64_t> out) {
#ifndef _OPENMP
  random_words_serial(seed, n, out);
#else
  int64_t nw = static_cast<int64_t>(out.size());
#pragma omp parallel for num_threads(threads_for(n)) schedule(static)
  for (int64_t j = 0; j < nw; ++j) out[j] = splitmix_at(seed, j);
  mask_out_tail(out, n);
#endif
}

void random_words(uint64_t seed, uint64_t n, std::span<uint64_t> out) {
  if (threads_for(n) > 1)
    random_words_parallel(seed, n, out);
  else
    random_words_serial(seed, n, out);
}

namespace {

// 53-bit uniform in [0,1) from the per-bit stream value.
inline bool bernoulli_bit(uint64_t seed, uint64_t i, double p) {
  constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  return static_cast<double>(splitmix_at(seed, i) >> 11) * kInv53 < p;
}

inline uint64_t bsc_word(uint64_t seed, double p, uint64_t word_index, uint64_t n) {
  uint64_t w = 0;
  uint64_t base = word_index * 64;
  uint64_t hi = std::min<uint64_t>(64, n - base);
  for (uint64_t b = 0; b < hi; ++b)
    w |= uint64_t{bernoulli_bit(seed, base + b, p)} << b;
  return w;
}

}  // namespace

void bsc_mask_serial(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out) {
  for (uint64_t j = 0; j < out.size(); ++j) out[j] = bsc_word(seed, p, j, n);
}

void bsc_mask_parallel(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out) {
#ifndef _OPENMP
  bsc_mask_serial(seed, p, n, out);
#else
  int64_t nw = static_cast<int64_t>(out.size());
#pragma omp parallel for num_threads(threads_for(n)) schedule(static)
  for (int64_t j = 0; j < nw; ++j) out[j] = bsc_word(seed, p, j, n);
#endif
}

void bsc_mask(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out) {
  if (threads_for(n) > 1)
    bsc_mask_parallel(seed, p, n, out);
  else
    bsc_mask_serial(seed, p, n, out);
}

}  // namespace cascade::kernels
