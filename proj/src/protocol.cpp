#include "cascade/protocol.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>

#include "cascade/kernels.hpp"

namespace cascade {

namespace {

constexpr size_t kPendingFoldLimit = 128;

uint64_t clamp_size(uint64_t k, uint64_t n) {
  uint64_t hi = std::max<uint64_t>(1, n / 2);
  return std::clamp<uint64_t>(k, 1, hi);
}

uint64_t size_from_rule(double x) {
  // ceil with a guard against the quotient landing a few ulps above an
  // integer (0.8/0.01 evaluates slightly over 80).
  return static_cast<uint64_t>(std::ceil(x - 1e-9));
}

}  // namespace

const char* variant_name(ScheduleVariant v) {
  return v == ScheduleVariant::original ? "original" : "high-eff";
}

std::optional<ScheduleVariant> variant_from_name(const std::string& name) {
  if (name == "original") return ScheduleVariant::original;
  if (name == "high-eff" || name == "high-efficiency")
    return ScheduleVariant::high_efficiency;
  return std::nullopt;
}

std::vector<Interval> partition_blocks(uint64_t n, uint64_t k) {
  std::vector<Interval> out;
  out.reserve((n + k - 1) / k);
  for (uint64_t start = 0; start < n; start += k)
    out.push_back({start, std::min(k, n - start)});
  return out;
}

PartitionSchedule make_schedule(double qber, uint64_t n, ScheduleVariant variant,
                                double first_round_constant) {
  if (!(qber > 0) || qber > 0.5)
    throw std::invalid_argument("make_schedule: qber must be in (0, 0.5]");
  if (n < 2) throw std::invalid_argument("make_schedule: frame too short");

  PartitionSchedule s;
  s.variant = variant;
  if (variant == ScheduleVariant::original) {
    uint64_t k = std::max<uint64_t>(
        2, static_cast<uint64_t>(std::llround(first_round_constant / qber)));
    for (int i = 0; i < 4; ++i) {
      s.sizes.push_back(clamp_size(k, n));
      k *= 2;
    }
  } else {
    s.sizes.push_back(clamp_size(std::max<uint64_t>(2, size_from_rule(0.8 / qber)), n));
    s.sizes.push_back(clamp_size(size_from_rule(4.0 / qber), n));
    s.sizes.push_back(clamp_size(1000, n));
    for (int i = 0; i < 7; ++i) s.sizes.push_back(clamp_size(1000000, n));
  }
  return s;
}

// --- BlockRegistry ---------------------------------------------------------

BlockRegistry::BlockRegistry(uint64_t n) : n_(n) {
  if (n > 0xffffffffull)
    throw std::invalid_argument("BlockRegistry: frame too large");
}

void BlockRegistry::begin_round(uint64_t k) {
  Round rd;
  rd.k = k;
  rd.top.assign((n_ + k - 1) / k, 0);
  rounds_.push_back(std::move(rd));
}

void BlockRegistry::add(uint32_t round, uint64_t start, uint64_t len, bool odd) {
  auto& rd = rounds_.at(round);
  if (is_top(rd, start, len)) {
    uint8_t& slot = rd.top[start / rd.k];
    bool was_odd = (slot & 2) && (slot & 1);
    slot = 2 | (odd ? 1 : 0);
    if (odd && !was_odd) {
      rd.odd_count += 1;
      rd.odd_list.push_back(pack(start, len));
    } else if (!odd && was_odd) {
      rd.odd_count -= 1;
    }
    return;
  }
  auto [it, inserted] = rd.sub.try_emplace(pack(start, len), odd ? 1 : 0);
  bool was_odd = !inserted && it->second;
  if (!inserted) it->second = odd ? 1 : 0;
  if (odd && !was_odd) {
    rd.odd_count += 1;
    rd.odd_list.push_back(pack(start, len));
  } else if (!odd && was_odd) {
    rd.odd_count -= 1;
  }
}

void BlockRegistry::toggle_containing(uint32_t round, uint64_t pos) {
  auto& rd = rounds_.at(round);
  uint64_t idx = pos / rd.k;
  uint8_t& slot = rd.top[idx];
  if (!(slot & 2)) return;  // chain starts at the top block
  uint64_t start = idx * rd.k;
  uint64_t len = std::min(rd.k, n_ - start);
  slot ^= 1;
  if (slot & 1) {
    rd.odd_count += 1;
    rd.odd_list.push_back(pack(start, len));
  } else {
    rd.odd_count -= 1;
  }
  while (len > 1) {
    uint64_t h = first_half_len(len);
    if (pos < start + h) {
      len = h;
    } else {
      start += h;
      len -= h;
    }
    auto it = rd.sub.find(pack(start, len));
    if (it == rd.sub.end()) break;
    it->second ^= 1;
    if (it->second) {
      rd.odd_count += 1;
      rd.odd_list.push_back(pack(start, len));
    } else {
      rd.odd_count -= 1;
    }
  }
}

void BlockRegistry::reserve_search(uint32_t round, uint64_t expected_blocks) {
  auto& rd = rounds_.at(round);
  rd.sub.reserve(rd.sub.size() + expected_blocks);
}

bool BlockRegistry::contains(uint32_t round, uint64_t start, uint64_t len) const {
  const auto& rd = rounds_.at(round);
  if (is_top(rd, start, len)) return rd.top[start / rd.k] & 2;
  return rd.sub.count(pack(start, len)) != 0;
}

bool BlockRegistry::is_odd(uint32_t round, uint64_t start, uint64_t len) const {
  const auto& rd = rounds_.at(round);
  if (is_top(rd, start, len)) {
    uint8_t slot = rd.top[start / rd.k];
    return (slot & 2) && (slot & 1);
  }
  auto it = rd.sub.find(pack(start, len));
  return it != rd.sub.end() && it->second;
}

std::optional<uint32_t> BlockRegistry::earliest_odd_round() const {
  for (uint32_t r = 0; r < rounds_.size(); ++r)
    if (rounds_[r].odd_count > 0) return r;
  return std::nullopt;
}

// Drops stale and duplicate entries so odd_list holds each currently-odd
// block exactly once.
void BlockRegistry::compact(uint32_t round) {
  auto& rd = rounds_[round];
  std::sort(rd.odd_list.begin(), rd.odd_list.end());
  rd.odd_list.erase(std::unique(rd.odd_list.begin(), rd.odd_list.end()),
                    rd.odd_list.end());
  std::erase_if(rd.odd_list, [&](uint64_t key) {
    return !is_odd(round, key >> 32, key & 0xffffffffull);
  });
}

std::vector<BlockRef> BlockRegistry::minimal_odd_blocks(uint32_t round) {
  auto& rd = rounds_.at(round);
  compact(round);
  std::vector<BlockRef> all;
  all.reserve(rd.odd_list.size());
  for (uint64_t key : rd.odd_list)
    all.push_back({round, key >> 32, key & 0xffffffffull, true});
  std::sort(all.begin(), all.end(), [](const BlockRef& a, const BlockRef& b) {
    return a.len != b.len ? a.len < b.len : a.start < b.start;
  });
  // Same-round blocks are nested or disjoint, so a block strictly containing
  // another odd block shows up as a taken start inside its interval.
  std::vector<uint64_t> taken;  // sorted starts of selected blocks
  std::vector<BlockRef> out;
  for (const auto& b : all) {
    auto it = std::lower_bound(taken.begin(), taken.end(), b.start);
    if (it != taken.end() && *it < b.start + b.len) continue;
    taken.insert(it, b.start);
    out.push_back(b);
  }
  return out;
}

std::vector<BlockRef> BlockRegistry::odd_unit_blocks() {
  std::vector<BlockRef> out;
  for (uint32_t r = 0; r < rounds_.size(); ++r) {
    auto& rd = rounds_[r];
    if (rd.odd_count == 0) continue;
    compact(r);
    for (uint64_t key : rd.odd_list)
      if ((key & 0xffffffffull) == 1) out.push_back({r, key >> 32, 1, true});
  }
  return out;
}

uint64_t BlockRegistry::entry_count() const {
  uint64_t total = 0;
  for (const auto& rd : rounds_) {
    for (uint8_t slot : rd.top) total += (slot & 2) ? 1 : 0;
    total += rd.sub.size();
  }
  return total;
}

uint64_t BlockRegistry::memory_estimate() const {
  // Rough per-node cost for the hash map; flat storage is counted exactly.
  uint64_t total = 0;
  for (const auto& rd : rounds_)
    total += rd.top.size() + rd.sub.size() * 48 + rd.odd_list.capacity() * 8;
  return total;
}

std::vector<BlockRef> BlockRegistry::snapshot() const {
  std::vector<BlockRef> out;
  out.reserve(entry_count());
  for (uint32_t r = 0; r < rounds_.size(); ++r) {
    const auto& rd = rounds_[r];
    for (uint64_t i = 0; i < rd.top.size(); ++i)
      if (rd.top[i] & 2) {
        uint64_t start = i * rd.k;
        out.push_back({r, start, std::min(rd.k, n_ - start),
                       (rd.top[i] & 1) != 0});
      }
    for (const auto& [key, odd] : rd.sub)
      out.push_back({r, key >> 32, key & 0xffffffffull, odd != 0});
  }
  return out;
}

// --- Session::RoundView ----------------------------------------------------

bool Session::RoundView::parity(uint64_t start, uint64_t len) const {
  bool base = pp.interval(start, len);
  if (!pending.empty()) {
    auto lo = std::lower_bound(pending.begin(), pending.end(), start);
    auto hi = std::lower_bound(lo, pending.end(), start + len);
    if ((hi - lo) & 1) base = !base;
  }
  return base;
}

void Session::RoundView::flip(uint64_t pos) {
  bits.flip(pos);
  pending.insert(std::upper_bound(pending.begin(), pending.end(), pos), pos);
  if (pending.size() >= kPendingFoldLimit) {
    pp.rebuild(bits);
    pending.clear();
  }
}

// --- Session ----------------------------------------------------------------

Session::Session(Role role, BitFrame frame, Transport& transport,
                 SessionParams params, SessionOptions opts)
    : role_(role),
      frame_(std::move(frame)),
      tr_(transport),
      params_(params),
      opts_(std::move(opts)),
      n_(frame_.size()),
      reg_(frame_.size()) {
  if (n_ < 2) throw std::invalid_argument("Session: frame too short");
  if (role_ == Role::correcting) initial_frame_ = frame_;
}

void Session::send_msg(MsgType type, uint32_t round,
                       decltype(Message::payload) payload) {
  Message m;
  m.type = type;
  m.session_id = params_.session_id;
  m.round = round;
  m.payload = std::move(payload);
  tr_.send(m);
}

void Session::send_abort(uint32_t code, const std::string& reason) {
  try {
    send_msg(MsgType::abort, 0, AbortPayload{code, reason});
  } catch (...) {
    // The peer is gone; the throw below still reports the original problem.
  }
}

void Session::fail(uint32_t code, const std::string& reason) {
  send_abort(code, reason);
  throw ProtocolError(reason);
}

Message Session::expect(MsgType type, uint32_t round) {
  Message m = tr_.recv();
  if (m.type == MsgType::abort) {
    const auto& a = std::get<AbortPayload>(m.payload);
    throw ProtocolError("peer aborted: " + a.reason);
  }
  if (m.type != type)
    fail(2, std::string("unexpected ") + msg_type_name(m.type) + ", wanted " +
                msg_type_name(type));
  if (m.round != round) fail(3, "round number mismatch");
  if (handshaken_ && m.session_id != params_.session_id)
    fail(4, "session id mismatch");
  return m;
}

void Session::handshake() {
  if (role_ == Role::correcting) {
    HelloPayload h;
    h.version = params_.version;
    h.n = n_;
    h.qber_ppm = static_cast<uint32_t>(params_.qber_estimate * 1e6 + 0.5);
    h.variant = static_cast<uint8_t>(params_.variant);
    h.seed = params_.seed;
    send_msg(MsgType::hello, 0, h);

    Message m = expect(MsgType::schedule, 0);
    const auto& s = std::get<SchedulePayload>(m.payload);
    if (s.accepted.version != params_.version) fail(5, "version mismatch");
    if (s.accepted.n != n_) fail(6, "frame length mismatch");
    if (s.accepted.seed != params_.seed) fail(7, "seed echo mismatch");
    if (s.sizes.empty() || s.sizes.size() > 64) fail(8, "bad schedule");
    for (uint64_t k : s.sizes)
      if (k < 1 || k > n_) fail(8, "bad schedule");
    sched_.variant = static_cast<ScheduleVariant>(s.accepted.variant);
    sched_.sizes = s.sizes;
  } else {
    Message m = tr_.recv();
    if (m.type != MsgType::hello) fail(2, "expected HELLO");
    const auto& h = std::get<HelloPayload>(m.payload);
    params_.session_id = m.session_id;
    if (h.version != params_.version) fail(5, "version mismatch");
    if (h.n != n_) fail(6, "frame length mismatch");
    params_.seed = h.seed;
    params_.qber_estimate = h.qber_ppm / 1e6;
    params_.variant = static_cast<ScheduleVariant>(h.variant);
    if (params_.schedule_override) {
      for (uint64_t k : *params_.schedule_override)
        if (k < 1 || k > n_) fail(8, "bad schedule override");
      if (params_.schedule_override->empty()) fail(8, "bad schedule override");
      sched_.variant = params_.variant;
      sched_.sizes = *params_.schedule_override;
    } else {
      sched_ = make_schedule(params_.qber_estimate, n_, params_.variant,
                             params_.first_round_constant);
    }

    SchedulePayload s;
    s.accepted = h;
    s.sizes = sched_.sizes;
    send_msg(MsgType::schedule, 0, std::move(s));
  }
  handshaken_ = true;
}

void Session::begin_round(uint32_t round_idx) {
  uint64_t k = sched_.sizes[round_idx];
  RoundView v{PermutationKey(params_.seed, round_idx + 1, n_,
                             opts_.identity_first_round),
              BitFrame(n_), PrefixParity{}, {}, k};
  kernels::permute_gather(frame_, v.key, v.bits);
  v.pp.rebuild(v.bits);
  views_.push_back(std::move(v));
  reg_.begin_round(k);
}

void Session::resolve_flip(uint32_t round_idx, uint64_t pos) {
  on_flip_original(views_[round_idx].key.inverse(pos));
}

void Session::on_flip_original(uint64_t orig) {
  flips_ += 1;
  if (role_ == Role::correcting) frame_.flip(orig);
  if (opts_.flip_observer) opts_.flip_observer(orig);
  for (uint32_t m = 0; m < views_.size(); ++m) {
    uint64_t pos = views_[m].key.forward(orig);
    if (role_ == Role::correcting) views_[m].flip(pos);
    reg_.toggle_containing(m, pos);
  }
}

void Session::round_phase(uint32_t round_idx) {
  begin_round(round_idx);
  const auto& view = views_[round_idx];
  auto blocks = partition_blocks(n_, view.k);
  uint64_t block_count = blocks.size();
  uint32_t round_no = round_idx + 1;

  std::vector<uint8_t> mask;
  if (role_ == Role::correcting) {
    BitsPayload parities;
    parities.bits.resize(block_count);
    for (uint64_t j = 0; j < block_count; ++j)
      parities.bits[j] = view.parity(blocks[j].start, blocks[j].len);
    send_msg(MsgType::round_parities, round_no, std::move(parities));

    Message m = expect(MsgType::mismatch_mask, round_no);
    mask = std::move(std::get<BitsPayload>(m.payload).bits);
    if (mask.size() != block_count) fail(9, "mismatch mask size");
  } else {
    Message m = expect(MsgType::round_parities, round_no);
    const auto& theirs = std::get<BitsPayload>(m.payload).bits;
    if (theirs.size() != block_count) fail(9, "round parities size");
    mask.resize(block_count);
    for (uint64_t j = 0; j < block_count; ++j)
      mask[j] = theirs[j] ^ uint8_t{view.parity(blocks[j].start, blocks[j].len)};
    BitsPayload reply;
    reply.bits = mask;
    send_msg(MsgType::mismatch_mask, round_no, std::move(reply));
  }
  leak_ += block_count;
  rt_parity_ += 1;

  for (uint64_t j = 0; j < block_count; ++j)
    reg_.add(round_idx, blocks[j].start, blocks[j].len, mask[j] != 0);

  std::vector<SearchBlock> active;
  for (uint64_t j = 0; j < block_count; ++j) {
    if (!mask[j]) continue;
    if (blocks[j].len == 1)
      resolve_flip(round_idx, blocks[j].start);
    else
      active.push_back({blocks[j].start, blocks[j].len});
  }
  uint64_t depth_bound = std::bit_width(view.k);
  reg_.reserve_search(round_idx, active.size() * 2 * depth_bound);
  rt_search_ += run_search(round_idx, std::move(active));
  lookback_loop();
  sample_memory();
}

uint64_t Session::run_search(uint32_t round_idx, std::vector<SearchBlock> active) {
  uint64_t depths = 0;
  const auto& view = views_[round_idx];
  uint32_t round_no = round_idx + 1;

  while (!active.empty()) {
    size_t count = active.size();
    std::vector<uint8_t> dirs;  // per block: 0 = error in first half
    if (role_ == Role::reference) {
      BitsPayload halves;
      halves.bits.resize(count);
      for (size_t j = 0; j < count; ++j)
        halves.bits[j] =
            view.parity(active[j].start, first_half_len(active[j].len));
      send_msg(MsgType::half_parities, round_no, std::move(halves));

      Message m = expect(MsgType::direction_mask, round_no);
      dirs = std::move(std::get<BitsPayload>(m.payload).bits);
      if (dirs.size() != count) fail(10, "direction mask size");
    } else {
      Message m = expect(MsgType::half_parities, round_no);
      const auto& halves = std::get<BitsPayload>(m.payload).bits;
      if (halves.size() != count) fail(10, "half parities size");
      dirs.resize(count);
      for (size_t j = 0; j < count; ++j) {
        bool mine = view.parity(active[j].start, first_half_len(active[j].len));
        dirs[j] = mine == (halves[j] != 0) ? 1 : 0;
      }
      BitsPayload reply;
      reply.bits = dirs;
      send_msg(MsgType::direction_mask, round_no, std::move(reply));
    }
    leak_ += count;
    depths += 1;

    std::vector<SearchBlock> next;
    std::vector<uint64_t> resolved;
    for (size_t j = 0; j < count; ++j) {
      uint64_t h = first_half_len(active[j].len);
      bool err_first = dirs[j] == 0;
      reg_.add(round_idx, active[j].start, h, err_first);
      reg_.add(round_idx, active[j].start + h, active[j].len - h, !err_first);
      uint64_t ns = err_first ? active[j].start : active[j].start + h;
      uint64_t nl = err_first ? h : active[j].len - h;
      if (nl == 1)
        resolved.push_back(ns);
      else
        next.push_back({ns, nl});
    }
    for (uint64_t pos : resolved) resolve_flip(round_idx, pos);
    active = std::move(next);
  }
  return depths;
}

void Session::lookback_loop() {
  for (;;) {
    // Single-bit odd blocks pin an error exactly; no exchange needed.
    for (;;) {
      auto units = reg_.odd_unit_blocks();
      if (units.empty()) break;
      for (const auto& u : units)
        if (reg_.is_odd(u.round, u.start, 1)) resolve_flip(u.round, u.start);
    }
    auto round = reg_.earliest_odd_round();
    if (!round) break;
    auto blocks = reg_.minimal_odd_blocks(*round);
    std::vector<SearchBlock> active;
    active.reserve(blocks.size());
    for (const auto& b : blocks) active.push_back({b.start, b.len});
    rt_lookback_ += run_search(*round, std::move(active));
    sample_memory();
  }
}

bool Session::digest_phase() {
  uint64_t mine = frame_digest(frame_);
  uint64_t theirs = 0;
  if (role_ == Role::correcting) {
    send_msg(MsgType::digest, 0, DigestPayload{mine});
    theirs = std::get<DigestPayload>(expect(MsgType::digest, 0).payload).digest;
  } else {
    theirs = std::get<DigestPayload>(expect(MsgType::digest, 0).payload).digest;
    send_msg(MsgType::digest, 0, DigestPayload{mine});
  }
  return mine == theirs;
}

uint64_t Session::current_memory_estimate() const {
  uint64_t bytes = frame_.word_count() * 8 + initial_frame_.word_count() * 8;
  for (const auto& v : views_) {
    bytes += v.bits.word_count() * 8;   // permuted frame
    bytes += v.bits.word_count() * 8 + 8;  // prefix parity list
    bytes += v.pending.capacity() * 8;
  }
  bytes += reg_.memory_estimate();
  return bytes;
}

void Session::sample_memory() {
  peak_mem_ = std::max(peak_mem_, current_memory_estimate());
}

ReconciliationResult Session::run() {
  if (ran_) throw std::logic_error("Session::run called twice");
  ran_ = true;

  handshake();

  auto c0 = tr_.counters();
  auto t0 = std::chrono::steady_clock::now();
  for (uint32_t r = 0; r < sched_.rounds(); ++r) round_phase(r);
  bool verified = digest_phase();
  auto t1 = std::chrono::steady_clock::now();
  auto c1 = tr_.counters();

  ReconciliationResult out;
  out.verified = verified;
  out.schedule_sizes = sched_.sizes;

  SessionMetrics& m = out.metrics;
  m.n = n_;
  m.qber_config = params_.qber_estimate;
  m.qber_true = role_ == Role::correcting
                    ? static_cast<double>(hamming_distance(initial_frame_, frame_)) /
                          static_cast<double>(n_)
                    : static_cast<double>(flips_) / static_cast<double>(n_);
  m.leaked_bits = leak_;
  m.flips = flips_;
  m.round_trips = rt_parity_ + rt_search_ + rt_lookback_;
  m.rt_parity = rt_parity_;
  m.rt_search = rt_search_;
  m.rt_lookback = rt_lookback_;
  m.messages_sent = c1.messages_sent;
  m.messages_received = c1.messages_received;
  m.bytes_sent = c1.bytes_sent;
  m.bytes_received = c1.bytes_received;
  m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  m.comm_seconds = c1.wait_seconds - c0.wait_seconds;
  m.compute_seconds = std::max(0.0, m.wall_seconds - m.comm_seconds);
  m.corrected = verified;
  m.alpha = efficiency_alpha(n_, leak_, m.qber_true);
  m.throughput_bps =
      m.wall_seconds > 0 ? static_cast<double>(n_) / m.wall_seconds : 0;
  sample_memory();
  m.peak_memory_bytes = peak_mem_;

  out.frame = frame_;
  return out;
}

}  // namespace cascade
