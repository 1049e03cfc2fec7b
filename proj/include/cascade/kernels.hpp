#pragma once

#include <cstdint>
#include <span>

namespace cascade {
class BitFrame;
class PermutationKey;
}

// Data-parallel inner loops of the reconciler: prefix-parity scan, permuted
// gather, Hamming distance, and channel sampling. Each kernel has a serial
// reference implementation and an OpenMP variant that must produce
// bit-identical output; the dispatching entry points pick one at runtime.
namespace cascade::kernels {

// Global cap on OpenMP threads used by the dispatching kernels.
// 0 = runtime default. 1 forces the serial path (useful when many sessions
// already run on their own threads).
void set_max_threads(int t);
int max_threads();

// splitmix64 finalizer; the fixed mixing function used throughout for seeded
// deterministic generation.
uint64_t mix64(uint64_t x);

// i-th output of the splitmix64 stream for a given seed.
uint64_t splitmix_at(uint64_t seed, uint64_t index);

// --- prefix parity -------------------------------------------------------
// out receives n+1 packed bits: out[i] = XOR of frame bits [0, i).
// frame must carry n bits with a zeroed tail; out must hold (n+64)/64 words.
void prefix_parity_serial(std::span<const uint64_t> frame, uint64_t n,
                          std::span<uint64_t> out);
void prefix_parity_parallel(std::span<const uint64_t> frame, uint64_t n,
                            std::span<uint64_t> out);
void prefix_parity(std::span<const uint64_t> frame, uint64_t n,
                   std::span<uint64_t> out);

// --- hamming distance ----------------------------------------------------
uint64_t hamming_serial(std::span<const uint64_t> a, std::span<const uint64_t> b);
uint64_t hamming_parallel(std::span<const uint64_t> a, std::span<const uint64_t> b);
uint64_t hamming(std::span<const uint64_t> a, std::span<const uint64_t> b);

// --- permuted gather -----------------------------------------------------
// out[t] = src[key.inverse(t)], i.e. out[key.forward(i)] = src[i].
// out must be sized to src. Identity keys reduce to a copy.
void permute_gather_serial(const BitFrame& src, const PermutationKey& key,
                           BitFrame& out);
void permute_gather_parallel(const BitFrame& src, const PermutationKey& key,
                             BitFrame& out);
void permute_gather(const BitFrame& src, const PermutationKey& key,
                    BitFrame& out);

// --- seeded generation ---------------------------------------------------
// Uniform random words (tail masked to n bits).
void random_words_serial(uint64_t seed, uint64_t n, std::span<uint64_t> out);
void random_words_parallel(uint64_t seed, uint64_t n, std::span<uint64_t> out);
void random_words(uint64_t seed, uint64_t n, std::span<uint64_t> out);

// Bernoulli(p) mask: bit i set with probability p, independently, from the
// splitmix64 stream at index i. Counting-free, so any sub-range can be
// produced without generating the rest.
void bsc_mask_serial(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out);
void bsc_mask_parallel(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out);
void bsc_mask(uint64_t seed, double p, uint64_t n, std::span<uint64_t> out);

}  // namespace cascade::kernels
