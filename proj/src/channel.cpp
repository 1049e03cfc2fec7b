#include "cascade/channel.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cascade/kernels.hpp"

namespace cascade {

namespace {
constexpr uint64_t kFrameStream = 0x66726d65u;  // domain separators
constexpr uint64_t kNoiseStream = 0x6e6f6973u;
constexpr char kMagic[4] = {'Q', 'B', 'S', 'C'};
}  // namespace

FramePair generate_pair(const ChannelConfig& cfg) {
  if (cfg.qber < 0 || cfg.qber > 0.5)
    throw std::invalid_argument("generate_pair: qber outside [0, 0.5]");
  FramePair out;
  out.reference = BitFrame(cfg.n);
  out.noisy = BitFrame(cfg.n);

  uint64_t frame_seed = kernels::mix64(cfg.seed ^ kFrameStream);
  uint64_t noise_seed = kernels::mix64(cfg.seed ^ kNoiseStream);

  kernels::random_words(frame_seed, cfg.n, out.reference.words());

  BitFrame mask(cfg.n);
  if (cfg.qber > 0) kernels::bsc_mask(noise_seed, cfg.qber, cfg.n, mask.words());

  auto ref = out.reference.words();
  auto noisy = out.noisy.words();
  auto mw = mask.words();
  out.error_positions.reserve(
      static_cast<size_t>(cfg.n * cfg.qber * 1.2) + 16);
  for (uint64_t j = 0; j < out.reference.word_count(); ++j) {
    noisy[j] = ref[j] ^ mw[j];
    uint64_t m = mw[j];
    while (m) {
      out.error_positions.push_back(j * 64 + std::countr_zero(m));
      m &= m - 1;
    }
  }
  return out;
}

BitFrame plant_errors(const BitFrame& frame, std::span<const uint64_t> positions) {
  std::vector<uint64_t> sorted(positions.begin(), positions.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("plant_errors: duplicate position");
  if (!sorted.empty() && sorted.back() >= frame.size())
    throw std::invalid_argument("plant_errors: position out of range");
  BitFrame noisy = frame;
  for (uint64_t p : sorted) noisy.flip(p);
  return noisy;
}

void write_pair_file(const std::filesystem::path& path, const ChannelConfig& cfg,
                     const BitFrame& reference, const BitFrame& noisy) {
  if (reference.size() != cfg.n || noisy.size() != cfg.n)
    throw std::invalid_argument("write_pair_file: frame length mismatch");
  if (cfg.n > 0xffffffffull)
    throw std::invalid_argument("write_pair_file: frame too large for header");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_pair_file: cannot open " + path.string());

  uint8_t header[16];
  std::memcpy(header, kMagic, 4);
  uint32_t n32 = static_cast<uint32_t>(cfg.n);
  uint32_t ppm = static_cast<uint32_t>(cfg.qber * 1e6 + 0.5);
  uint32_t seed32 = static_cast<uint32_t>(cfg.seed);
  std::memcpy(header + 4, &n32, 4);
  std::memcpy(header + 8, &ppm, 4);
  std::memcpy(header + 12, &seed32, 4);
  f.write(reinterpret_cast<const char*>(header), sizeof(header));

  auto ref_bytes = reference.to_bytes();
  auto noisy_bytes = noisy.to_bytes();
  f.write(reinterpret_cast<const char*>(ref_bytes.data()), ref_bytes.size());
  f.write(reinterpret_cast<const char*>(noisy_bytes.data()), noisy_bytes.size());
  if (!f) throw std::runtime_error("write_pair_file: write failed");
}

PairFile read_pair_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pair_file: cannot open " + path.string());
  uint8_t header[16];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || std::memcmp(header, kMagic, 4) != 0)
    throw std::runtime_error("read_pair_file: bad header");

  uint32_t n32, ppm, seed32;
  std::memcpy(&n32, header + 4, 4);
  std::memcpy(&ppm, header + 8, 4);
  std::memcpy(&seed32, header + 12, 4);

  PairFile out;
  out.cfg.n = n32;
  out.cfg.qber = ppm / 1e6;
  out.cfg.seed = seed32;

  std::vector<uint8_t> buf((n32 + 7) / 8);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!f) throw std::runtime_error("read_pair_file: truncated reference frame");
  out.reference = BitFrame::from_bytes(buf, n32);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!f) throw std::runtime_error("read_pair_file: truncated noisy frame");
  out.noisy = BitFrame::from_bytes(buf, n32);
  return out;
}

}  // namespace cascade
