#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cascade/bitframe.hpp"

namespace cascade {

// Binary symmetric channel: each bit of the reference frame is flipped
// independently with probability qber. Generation is fully determined by the
// seed: the reference words and the flip decisions are drawn from two
// splitmix64 streams derived from it, one value per word / per bit, so runs
// replay exactly and any sub-range could be regenerated in isolation.
struct ChannelConfig {
  uint64_t n = 0;
  double qber = 0;  // in [0, 0.5]
  uint64_t seed = 0;
};

struct FramePair {
  BitFrame reference;
  BitFrame noisy;
  // Ground truth for harness oracles only; never handed to the protocol.
  std::vector<uint64_t> error_positions;
};

FramePair generate_pair(const ChannelConfig& cfg);

// Noisy copy differing from frame exactly at the given positions.
// Positions must be distinct and in range.
BitFrame plant_errors(const BitFrame& frame, std::span<const uint64_t> positions);

// Pair file: 16-byte header (magic "QBSC", n as u32 LE, qber in parts per
// million as u32 LE, low 32 bits of the seed as u32 LE), then the reference
// frame and the noisy frame, each packed LSB-first into ceil(n/8) bytes.
struct PairFile {
  ChannelConfig cfg;  // qber reconstructed from ppm; seed low 32 bits only
  BitFrame reference;
  BitFrame noisy;
};

void write_pair_file(const std::filesystem::path& path, const ChannelConfig& cfg,
                     const BitFrame& reference, const BitFrame& noisy);
PairFile read_pair_file(const std::filesystem::path& path);

}  // namespace cascade
