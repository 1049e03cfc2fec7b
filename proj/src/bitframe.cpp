#include "cascade/bitframe.hpp"

#include <bit>
#include <stdexcept>

#include "cascade/kernels.hpp"

namespace cascade {

void BitFrame::check_index(uint64_t i) const {
  if (i >= n_) throw std::out_of_range("BitFrame: bit index out of range");
}

bool BitFrame::get(uint64_t i) const {
  check_index(i);
  return (words_[i / 64] >> (i % 64)) & 1;
}

void BitFrame::set(uint64_t i, bool v) {
  check_index(i);
  uint64_t mask = uint64_t{1} << (i % 64);
  if (v)
    words_[i / 64] |= mask;
  else
    words_[i / 64] &= ~mask;
}

void BitFrame::flip(uint64_t i) {
  check_index(i);
  words_[i / 64] ^= uint64_t{1} << (i % 64);
}

void BitFrame::mask_tail() {
  if (n_ % 64 != 0 && !words_.empty())
    words_.back() &= (uint64_t{1} << (n_ % 64)) - 1;
}

BitFrame BitFrame::from_bytes(std::span<const uint8_t> bytes, uint64_t n) {
  if (bytes.size() < (n + 7) / 8)
    throw std::invalid_argument("BitFrame::from_bytes: buffer too short");
  BitFrame f(n);
  for (uint64_t b = 0; b < (n + 7) / 8; ++b)
    f.words_[b / 8] |= uint64_t{bytes[b]} << ((b % 8) * 8);
  f.mask_tail();
  return f;
}

std::vector<uint8_t> BitFrame::to_bytes() const {
  std::vector<uint8_t> out((n_ + 7) / 8);
  for (uint64_t b = 0; b < out.size(); ++b)
    out[b] = static_cast<uint8_t>(words_[b / 8] >> ((b % 8) * 8));
  return out;
}

uint64_t hamming_distance(const BitFrame& a, const BitFrame& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("hamming_distance: length mismatch");
  return kernels::hamming(a.words(), b.words());
}

void flip_bit(BitFrame& frame, uint64_t i) { frame.flip(i); }

uint64_t frame_digest(const BitFrame& frame) {
  uint64_t h = 14695981039346656037ull;
  uint64_t nbytes = (frame.size() + 7) / 8;
  auto words = frame.words();
  for (uint64_t b = 0; b < nbytes; ++b) {
    h ^= static_cast<uint8_t>(words[b / 8] >> ((b % 8) * 8));
    h *= 1099511628211ull;
  }
  return h;
}

bool PrefixParity::interval(uint64_t start, uint64_t len) const {
  uint64_t n = size();
  if (start > n || len > n - start)
    throw std::out_of_range("PrefixParity::interval out of range");
  return bits_.get(start) ^ bits_.get(start + len);
}

void PrefixParity::apply_flip(uint64_t i) {
  uint64_t n = size();
  if (i >= n) throw std::out_of_range("PrefixParity::apply_flip out of range");
  // Toggle entries i+1 .. n: whole words past the split, a masked head word.
  auto words = bits_.words();
  uint64_t first = i + 1;
  uint64_t w = first / 64;
  words[w] ^= ~uint64_t{0} << (first % 64);
  for (++w; w < words.size(); ++w) words[w] ^= ~uint64_t{0};
  bits_.mask_tail();
}

void PrefixParity::rebuild(const BitFrame& frame) {
  if (bits_.size() != frame.size() + 1) bits_ = BitFrame(frame.size() + 1);
  kernels::prefix_parity(frame.words(), frame.size(), bits_.words());
}

PrefixParity build_prefix(const BitFrame& frame) {
  PrefixParity pp;
  pp.rebuild(frame);
  return pp;
}

}  // namespace cascade
