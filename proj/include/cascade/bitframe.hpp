#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cascade {

// Packed bit string of fixed length n. Bit i lives in word i/64 at bit
// position i%64, so serializing the words little-endian yields an LSB-first
// byte layout: bit i of the stream is byte i/8, bit i%8. Unused bits past n
// in the last word are kept zero.
class BitFrame {
 public:
  BitFrame() = default;
  explicit BitFrame(uint64_t n) : n_(n), words_((n + 63) / 64, 0) {}

  static BitFrame from_bytes(std::span<const uint8_t> bytes, uint64_t n);

  uint64_t size() const { return n_; }
  uint64_t word_count() const { return words_.size(); }

  bool get(uint64_t i) const;
  void set(uint64_t i, bool v);
  void flip(uint64_t i);

  std::span<const uint64_t> words() const { return words_; }
  std::span<uint64_t> words() { return words_; }

  // Clears any bits at positions >= n in the last word.
  void mask_tail();

  std::vector<uint8_t> to_bytes() const;

  bool operator==(const BitFrame&) const = default;

 private:
  void check_index(uint64_t i) const;

  uint64_t n_ = 0;
  std::vector<uint64_t> words_;
};

// Number of positions where a and b differ. Frames must have equal length.
uint64_t hamming_distance(const BitFrame& a, const BitFrame& b);

// Toggles bit i of the frame in place. Any prefix-parity list built from the
// frame is a snapshot and becomes stale; callers either rebuild it, patch it
// with PrefixParity::apply_flip, or track corrections on the side.
void flip_bit(BitFrame& frame, uint64_t i);

// 64-bit FNV-1a over the frame's canonical byte layout.
uint64_t frame_digest(const BitFrame& frame);

// Cumulative-parity list over a frame of n bits: entry i is the XOR of the
// first i data bits, entry 0 is 0. Stored packed, n+1 bits total. The parity
// of any bit interval is the XOR of two entries.
class PrefixParity {
 public:
  PrefixParity() = default;

  // n, the length of the underlying frame (the list itself has n+1 entries).
  uint64_t size() const { return bits_.size() == 0 ? 0 : bits_.size() - 1; }

  bool get(uint64_t i) const { return bits_.get(i); }

  // XOR of frame bits [start, start+len). O(1): two lookups.
  bool interval(uint64_t start, uint64_t len) const;

  // Patch path after frame bit i was toggled: toggles entries i+1 .. n.
  void apply_flip(uint64_t i);

  // Recomputes the list from the frame, reusing storage when the length
  // matches.
  void rebuild(const BitFrame& frame);

 private:
  friend PrefixParity build_prefix(const BitFrame& frame);
  BitFrame bits_;
};

PrefixParity build_prefix(const BitFrame& frame);

inline bool interval_parity(const PrefixParity& pp, uint64_t start, uint64_t len) {
  return pp.interval(start, len);
}

}  // namespace cascade
