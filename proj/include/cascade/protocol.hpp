#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cascade/bitframe.hpp"
#include "cascade/metrics.hpp"
#include "cascade/permute.hpp"
#include "cascade/wire.hpp"

namespace cascade {

// Parity bookkeeping no longer lines up with what the peer sent; the session
// cannot continue safely.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Role : uint8_t { reference, correcting };

enum class ScheduleVariant : uint8_t { original = 0, high_efficiency = 1 };

const char* variant_name(ScheduleVariant v);
std::optional<ScheduleVariant> variant_from_name(const std::string& name);

struct PartitionSchedule {
  ScheduleVariant variant = ScheduleVariant::original;
  std::vector<uint64_t> sizes;  // k_1 .. k_r
  uint32_t rounds() const { return static_cast<uint32_t>(sizes.size()); }
  bool operator==(const PartitionSchedule&) const = default;
};

// Partition sizes per round.
//   original:        k_1 = first_round_constant / qber, doubling, 4 rounds.
//   high-efficiency: k_1 = 0.8/qber, k_2 = 4/qber, k_3 = 1000, then seven
//                    rounds of 10^6.
// Every size is clamped to [1, max(1, n/2)]; k_1 never drops below 2 (a
// one-bit first-round block would disclose the bit itself).
PartitionSchedule make_schedule(double qber, uint64_t n, ScheduleVariant variant,
                                double first_round_constant = 0.73);

// When a block splits during the binary search, the first half takes the
// ceiling. Shared by the search and the registry walk; both sides of the
// session must agree on it.
inline uint64_t first_half_len(uint64_t len) { return (len + 1) / 2; }

struct Interval {
  uint64_t start = 0;
  uint64_t len = 0;
  bool operator==(const Interval&) const = default;
};

// Contiguous blocks of size k covering n bits; the last may be shorter.
std::vector<Interval> partition_blocks(uint64_t n, uint64_t k);

struct BlockRef {
  uint32_t round = 0;  // 0-based round index
  uint64_t start = 0;  // in that round's permuted order
  uint64_t len = 0;
  bool odd = false;  // current error parity: reference vs corrected-so-far
};

// Every block whose parity was ever compared, per round, with its current
// error-parity state. States are maintained incrementally: correcting a bit
// toggles every registered block containing it. Blocks of one round are
// laminar (top-level partition plus halving descendants), so the blocks
// containing a position form a single chain walked top-down.
//
// Top-level blocks are dense (every one is registered when its round's
// parities are exchanged) and live in a flat array; split descendants are
// sparse and live in a hash map. Odd blocks are tracked by a counter plus a
// lazily compacted list, which keeps the per-toggle cost at a couple of
// array/hash operations.
class BlockRegistry {
 public:
  explicit BlockRegistry(uint64_t n);

  void begin_round(uint64_t k);
  uint32_t rounds() const { return static_cast<uint32_t>(rounds_.size()); }

  // Inserts or refreshes a block's state.
  void add(uint32_t round, uint64_t start, uint64_t len, bool odd);

  // Toggles the state of every block of this round containing pos.
  void toggle_containing(uint32_t round, uint64_t pos);

  // Pre-sizes the split-block table for an upcoming batch of searches.
  void reserve_search(uint32_t round, uint64_t expected_blocks);

  bool contains(uint32_t round, uint64_t start, uint64_t len) const;
  bool is_odd(uint32_t round, uint64_t start, uint64_t len) const;

  std::optional<uint32_t> earliest_odd_round() const;

  // Odd blocks of the round that contain no smaller odd block, smallest
  // first; these can be searched in parallel (they never overlap).
  std::vector<BlockRef> minimal_odd_blocks(uint32_t round);

  // Odd single-bit blocks across all rounds; their one bit is an error.
  std::vector<BlockRef> odd_unit_blocks();

  uint64_t entry_count() const;
  uint64_t memory_estimate() const;
  std::vector<BlockRef> snapshot() const;

 private:
  struct Round {
    uint64_t k = 0;
    std::vector<uint8_t> top;  // per top block: bit0 odd, bit1 present
    std::unordered_map<uint64_t, uint8_t> sub;  // (start<<32|len) -> odd
    std::vector<uint64_t> odd_list;  // keys that turned odd; may hold stale
    uint64_t odd_count = 0;
  };
  static uint64_t pack(uint64_t start, uint64_t len) {
    return (start << 32) | len;
  }
  bool is_top(const Round& rd, uint64_t start, uint64_t len) const {
    return start % rd.k == 0 && len == std::min(rd.k, n_ - start);
  }
  void compact(uint32_t round);

  uint64_t n_ = 0;
  std::vector<Round> rounds_;
};

// Parameters the correcting party proposes in HELLO. The reference party
// learns them from the handshake; the sizes echoed in SCHEDULE are
// authoritative for both.
struct SessionParams {
  uint16_t session_id = 0;
  double qber_estimate = 0;
  ScheduleVariant variant = ScheduleVariant::original;
  Seed128 seed;
  double first_round_constant = 0.73;
  uint16_t version = 1;
  // Reference side only: pin explicit partition sizes instead of deriving
  // them from the handshake estimate. The echoed sizes bind both parties.
  std::optional<std::vector<uint64_t>> schedule_override;
};

struct SessionOptions {
  bool identity_first_round = true;
  // Test/oracle hook: called with the original-order index of every bit the
  // correcting party flips. Never consulted for protocol decisions.
  std::function<void(uint64_t)> flip_observer;
};

struct ReconciliationResult {
  BitFrame frame;  // corrected frame (correcting side) / own frame (reference)
  bool verified = false;
  std::vector<uint64_t> schedule_sizes;
  SessionMetrics metrics;
};

// One CASCADE session over a connected transport. Both parties run the same
// deterministic state machine; only parities, masks and the final digest
// travel. The correcting party initiates every phase.
class Session {
 public:
  Session(Role role, BitFrame frame, Transport& transport, SessionParams params,
          SessionOptions opts = {});

  ReconciliationResult run();

  const PartitionSchedule& schedule() const { return sched_; }
  const BitFrame& frame() const { return frame_; }
  // Registry dump for audits; meaningful after run().
  std::vector<BlockRef> registry_snapshot() const { return reg_.snapshot(); }
  const PermutationKey& round_key(uint32_t round_idx) const {
    return views_.at(round_idx).key;
  }

 private:
  struct RoundView {
    PermutationKey key;
    BitFrame bits;  // frame in this round's permuted order
    PrefixParity pp;
    std::vector<uint64_t> pending;  // flips since pp was built, sorted
    uint64_t k = 0;

    bool parity(uint64_t start, uint64_t len) const;
    void flip(uint64_t pos);
  };

  struct SearchBlock {
    uint64_t start = 0;
    uint64_t len = 0;
  };

  void handshake();
  void round_phase(uint32_t round_idx);
  uint64_t run_search(uint32_t round_idx, std::vector<SearchBlock> active);
  void lookback_loop();
  bool digest_phase();

  void begin_round(uint32_t round_idx);
  void resolve_flip(uint32_t round_idx, uint64_t pos);
  void on_flip_original(uint64_t orig);

  Message expect(MsgType type, uint32_t round);
  void send_msg(MsgType type, uint32_t round,
                decltype(Message::payload) payload);
  void send_abort(uint32_t code, const std::string& reason);
  [[noreturn]] void fail(uint32_t code, const std::string& reason);

  void sample_memory();
  uint64_t current_memory_estimate() const;

  Role role_;
  BitFrame frame_;
  BitFrame initial_frame_;
  Transport& tr_;
  SessionParams params_;
  SessionOptions opts_;
  PartitionSchedule sched_;
  uint64_t n_ = 0;
  bool handshaken_ = false;
  bool ran_ = false;

  std::vector<RoundView> views_;
  BlockRegistry reg_;

  uint64_t leak_ = 0;
  uint64_t rt_parity_ = 0;
  uint64_t rt_search_ = 0;
  uint64_t rt_lookback_ = 0;
  uint64_t flips_ = 0;
  uint64_t peak_mem_ = 0;
};

}  // namespace cascade
