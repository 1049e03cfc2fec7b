#include <doctest.h>

#include <algorithm>
#include <set>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "cascade/channel.hpp"
#include "cascade/harness.hpp"
#include "cascade/kernels.hpp"
#include "cascade/protocol.hpp"

using namespace cascade;

namespace {

SessionParams test_params(std::vector<uint64_t> sizes, Seed128 seed = {11, 22}) {
  SessionParams p;
  p.session_id = 1;
  p.qber_estimate = 0.01;
  p.seed = seed;
  p.schedule_override = std::move(sizes);
  return p;
}

// Parity mismatch of a registry block, recomputed from scratch on the final
// frames; independent of the session's incremental bookkeeping.
bool recomputed_odd(const BlockRef& b, const PermutationKey& key,
                    const BitFrame& reference, const BitFrame& corrected) {
  bool odd = false;
  for (uint64_t t = b.start; t < b.start + b.len; ++t) {
    uint64_t orig = key.inverse(t);
    odd ^= reference.get(orig) ^ corrected.get(orig);
  }
  return odd;
}

}  // namespace

TEST_CASE("schedule: original variant") {
  auto s = make_schedule(0.01, 10000000, ScheduleVariant::original);
  CHECK(s.sizes == std::vector<uint64_t>{73, 146, 292, 584});
  auto s5 = make_schedule(0.05, 10000000, ScheduleVariant::original);
  CHECK(s5.sizes == std::vector<uint64_t>{15, 30, 60, 120});
  auto s50 = make_schedule(0.5, 10000000, ScheduleVariant::original);
  CHECK(s50.sizes == std::vector<uint64_t>{2, 4, 8, 16});
}

TEST_CASE("schedule: high-efficiency variant") {
  auto s = make_schedule(0.01, 10000000, ScheduleVariant::high_efficiency);
  REQUIRE(s.sizes.size() == 10);
  CHECK(s.sizes[0] == 80);
  CHECK(s.sizes[1] == 400);
  CHECK(s.sizes[2] == 1000);
  for (int i = 3; i < 10; ++i) CHECK(s.sizes[i] == 1000000);
}

TEST_CASE("schedule: sizes clamp to n/2") {
  auto s = make_schedule(0.01, 100, ScheduleVariant::original);
  CHECK(s.sizes == std::vector<uint64_t>{50, 50, 50, 50});
  auto h = make_schedule(0.01, 1000, ScheduleVariant::high_efficiency);
  for (uint64_t k : h.sizes) CHECK(k <= 500);
  CHECK(h.sizes[0] == 80);
}

TEST_CASE("schedule: contract errors") {
  CHECK_THROWS_AS(make_schedule(0.0, 1000, ScheduleVariant::original),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(0.6, 1000, ScheduleVariant::original),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(0.01, 1, ScheduleVariant::original),
                  std::invalid_argument);
}

TEST_CASE("partition blocks with remainder") {
  auto blocks = partition_blocks(10, 4);
  REQUIRE(blocks.size() == 3);
  CHECK(blocks[0] == Interval{0, 4});
  CHECK(blocks[1] == Interval{4, 4});
  CHECK(blocks[2] == Interval{8, 2});
  CHECK(partition_blocks(8, 8).size() == 1);
  for (uint64_t n : {17ull, 100ull, 1023ull})
    for (uint64_t k : {1ull, 3ull, 7ull, 16ull})
      CHECK(partition_blocks(n, k).size() == (n + k - 1) / k);
}

TEST_CASE("registry toggling is involutive and walks the chain") {
  BlockRegistry reg(16);
  reg.begin_round(4);
  reg.add(0, 0, 4, false);
  reg.add(0, 4, 4, true);
  reg.add(0, 0, 2, false);  // children of [0,4)
  reg.add(0, 2, 2, false);

  auto before = reg.snapshot();
  reg.toggle_containing(0, 1);
  CHECK(reg.is_odd(0, 0, 4));
  CHECK(reg.is_odd(0, 0, 2));
  CHECK_FALSE(reg.is_odd(0, 2, 2));  // does not contain bit 1
  CHECK(reg.is_odd(0, 4, 4));        // untouched
  reg.toggle_containing(0, 1);
  auto after = reg.snapshot();
  auto key = [](const BlockRef& b) {
    return std::tuple{b.round, b.start, b.len, b.odd};
  };
  auto by_key = [&](const BlockRef& a, const BlockRef& b) {
    return key(a) < key(b);
  };
  std::sort(before.begin(), before.end(), by_key);
  std::sort(after.begin(), after.end(), by_key);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(key(before[i]) == key(after[i]));
}

TEST_CASE("registry minimal odd blocks prefer the deepest") {
  BlockRegistry reg(16);
  reg.begin_round(8);
  reg.add(0, 0, 8, true);
  reg.add(0, 0, 4, true);  // odd descendant: the parent must wait
  reg.add(0, 8, 8, true);
  auto blocks = reg.minimal_odd_blocks(0);
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].len == 4);
  CHECK(blocks[0].start == 0);
  CHECK(blocks[1].len == 8);
  CHECK(blocks[1].start == 8);
}

TEST_CASE("registry earliest odd round and unit blocks") {
  BlockRegistry reg(8);
  reg.begin_round(4);
  reg.begin_round(8);
  CHECK_FALSE(reg.earliest_odd_round().has_value());
  reg.add(1, 0, 8, true);
  CHECK(reg.earliest_odd_round() == 1);
  reg.add(0, 3, 1, true);
  CHECK(reg.earliest_odd_round() == 0);
  auto units = reg.odd_unit_blocks();
  REQUIRE(units.size() == 1);
  CHECK(units[0].start == 3);
}

TEST_CASE("identical frames: zero flips, r round trips, block-count leakage") {
  uint64_t n = 4096;
  auto pair = generate_pair({n, 0.0, 5});
  auto rr = run_loopback_frame(pair.reference, pair.noisy,
                               test_params({64, 128, 256, 512}), 0.0);
  const auto& m = rr.correcting.metrics;
  CHECK(rr.correcting.verified);
  CHECK(m.flips == 0);
  CHECK(m.round_trips == 4);
  CHECK(m.rt_parity == 4);
  CHECK(m.rt_search == 0);
  CHECK(m.rt_lookback == 0);
  CHECK(m.leaked_bits == 4096 / 64 + 4096 / 128 + 4096 / 256 + 4096 / 512);
  CHECK(m.qber_true == 0);
}

TEST_CASE("single planted error in one 8-bit block: 3 search round trips") {
  BitFrame reference(8);
  reference.set(1, true);
  reference.set(6, true);
  std::vector<uint64_t> pos{5};
  auto noisy = plant_errors(reference, pos);

  std::vector<uint64_t> flips;
  SessionOptions opts;
  opts.flip_observer = [&](uint64_t i) { flips.push_back(i); };
  auto rr = run_loopback_frame(reference, noisy, test_params({8}), 0.0, opts);

  CHECK(rr.correcting.verified);
  CHECK(rr.correcting.frame == reference);
  CHECK(flips == std::vector<uint64_t>{5});
  const auto& m = rr.correcting.metrics;
  CHECK(m.rt_parity == 1);
  CHECK(m.rt_search == 3);  // 8 -> 4 -> 2 -> 1
  CHECK(m.rt_lookback == 0);
  CHECK(m.leaked_bits == 1 + 3);
}

TEST_CASE("length-1 mismatched block resolves with no extra round trips") {
  BitFrame reference(9);
  std::vector<uint64_t> pos{8};
  auto noisy = plant_errors(reference, pos);
  auto rr = run_loopback_frame(reference, noisy, test_params({4}), 0.0);
  CHECK(rr.correcting.verified);
  const auto& m = rr.correcting.metrics;
  CHECK(m.flips == 1);
  CHECK(m.rt_parity == 1);
  CHECK(m.rt_search == 0);
  CHECK(m.leaked_bits == 3);  // the three block parities only
}

TEST_CASE("batched search depth is independent of the block count") {
  for (uint64_t nblocks : {1ull, 10ull, 100ull}) {
    uint64_t k = 1024;
    uint64_t n = nblocks * k;
    BitFrame reference(n);
    std::vector<uint64_t> errors;
    for (uint64_t b = 0; b < nblocks; ++b)
      errors.push_back(b * k + (b * 37 + 11) % k);  // one per block
    auto noisy = plant_errors(reference, errors);

    std::vector<uint64_t> flips;
    SessionOptions opts;
    opts.flip_observer = [&](uint64_t i) { flips.push_back(i); };
    auto rr = run_loopback_frame(reference, noisy, test_params({k}), 0.0, opts);

    CHECK(rr.correcting.verified);
    const auto& m = rr.correcting.metrics;
    CAPTURE(nblocks);
    CHECK(m.rt_search == 10);  // ceil(log2 1024), whatever the block count
    CHECK(m.rt_parity == 1);
    std::sort(flips.begin(), flips.end());
    CHECK(flips == errors);
    CHECK(m.leaked_bits == nblocks + nblocks * 10);
  }
}

TEST_CASE("an error pair hidden from round one is recovered via look-back") {
  // Errors {1,2} share a round-1 block and {9,10} share another, so round 1
  // sees nothing. With two rounds only, success requires the round-2 search
  // to correct one error of each pair; the flips then turn the two round-1
  // blocks odd and look-back must finish the job. Whether that happens
  // depends on how the round-2 permutation scatters the errors, so scan
  // session seeds for one that exercises the path (some seeds instead leave
  // a pair aligned in both rounds, which is an honest digest failure).
  uint64_t n = 16;
  std::vector<uint64_t> errors{1, 2, 9, 10};
  BitFrame reference(n);
  reference.set(0, true);
  reference.set(13, true);
  auto noisy = plant_errors(reference, errors);

  bool exercised = false;
  for (uint64_t s = 0; s < 64 && !exercised; ++s) {
    std::vector<uint64_t> flips;
    SessionOptions opts;
    opts.flip_observer = [&](uint64_t i) { flips.push_back(i); };
    auto rr = run_loopback_frame(reference, noisy, test_params({4, 8}, {s, 77}),
                                 0.0, opts);
    if (!rr.correcting.verified || rr.correcting.metrics.rt_lookback == 0)
      continue;
    exercised = true;
    CHECK(rr.correcting.frame == reference);
    std::sort(flips.begin(), flips.end());
    CHECK(flips == errors);
    // A 4-bit round-1 block takes two split exchanges to pin its error.
    CHECK(rr.correcting.metrics.rt_lookback >= 2);
  }
  CHECK(exercised);
}

TEST_CASE("every flip lands on a planted error and the registry ends even") {
  uint64_t n = 1024;
  auto pair = generate_pair({n, 0.05, 31});
  std::set<uint64_t> truth(pair.error_positions.begin(),
                           pair.error_positions.end());

  auto loop = make_loopback_pair(0.0);
  SessionParams params = test_params({16, 32, 64, 128}, {3, 9});
  std::set<uint64_t> outstanding = truth;
  SessionOptions opts;
  opts.flip_observer = [&](uint64_t i) {
    REQUIRE(outstanding.count(i) == 1);  // monotone distance decrease
    outstanding.erase(i);
  };

  Session bob(Role::correcting, pair.noisy, *loop.b, params, opts);
  ReconciliationResult bob_res, alice_res;
  std::thread alice_thread([&] {
    Session alice(Role::reference, pair.reference, *loop.a, params);
    alice_res = alice.run();
  });
  bob_res = bob.run();
  alice_thread.join();

  CHECK(bob_res.verified);
  CHECK(outstanding.empty());
  CHECK(bob_res.frame == pair.reference);

  // Stored states must match a from-scratch recomputation on the outcome.
  for (const auto& b : bob.registry_snapshot()) {
    REQUIRE_FALSE(b.odd);
    REQUIRE_FALSE(recomputed_odd(b, bob.round_key(b.round), pair.reference,
                                 bob_res.frame));
  }
}

TEST_CASE("correctness sweep: 510 random frames, at most one failure") {
  int failures = 0;
  int frames = 0;
  auto run_bucket = [&](uint64_t n, int count, uint64_t seed0) {
    for (int f = 0; f < count; ++f) {
      uint64_t h = kernels::mix64(seed0 + f);
      double qber = 0.01 + (h % 1000) / 1000.0 * 0.14;
      auto pair = generate_pair({n, qber, h});
      SessionParams p;
      p.session_id = static_cast<uint16_t>(f + 1);
      p.qber_estimate = qber;
      p.seed = {kernels::mix64(h), kernels::mix64(h ^ 0xff)};
      auto rr = run_loopback_frame(pair.reference, pair.noisy, p, 0.0);
      frames += 1;
      bool distance_zero =
          hamming_distance(rr.correcting.frame, pair.reference) == 0;
      if (!distance_zero) failures += 1;
      // The digest verdict must agree with the ground truth.
      CHECK(rr.correcting.verified == distance_zero);
    }
  };
  run_bucket(1 << 10, 300, 0xa0);
  run_bucket(1 << 16, 150, 0xb0);
  run_bucket(1 << 20, 60, 0xc0);
  CHECK(frames == 510);
  CHECK(failures <= 1);
}

TEST_CASE("high-efficiency schedule corrects too") {
  uint64_t n = 1 << 16;
  auto pair = generate_pair({n, 0.02, 77});
  SessionParams p;
  p.qber_estimate = 0.02;
  p.variant = ScheduleVariant::high_efficiency;
  p.seed = {5, 5};
  auto rr = run_loopback_frame(pair.reference, pair.noisy, p, 0.0);
  CHECK(rr.correcting.verified);
  CHECK(rr.correcting.schedule_sizes.size() == 10);
  CHECK(rr.correcting.frame == pair.reference);
}

TEST_CASE("transcripts are deterministic across runs") {
  uint64_t n = 1 << 12;
  auto pair = generate_pair({n, 0.03, 123});
  SessionParams p = test_params({32, 64, 128, 256}, {42, 99});

  auto run_once = [&](uint64_t& bob_sent, uint64_t& bob_recv) {
    auto loop = make_loopback_pair(0.0);
    std::thread alice_thread([&] {
      Session alice(Role::reference, pair.reference, *loop.a, p);
      alice.run();
    });
    Session bob(Role::correcting, pair.noisy, *loop.b, p);
    auto bob_res = bob.run();
    alice_thread.join();
    CHECK(bob_res.verified);
    bob_sent = loop.b->sent_digest();
    bob_recv = loop.b->received_digest();
    // What one side sent is exactly what the other received.
    CHECK(loop.b->sent_digest() == loop.a->received_digest());
    CHECK(loop.a->sent_digest() == loop.b->received_digest());
  };
  uint64_t s1, r1, s2, r2;
  run_once(s1, r1);
  run_once(s2, r2);
  CHECK(s1 == s2);
  CHECK(r1 == r2);
}

TEST_CASE("tcp session transcript equals loopback at zero latency") {
  uint64_t n = 1 << 12;
  auto pair = generate_pair({n, 0.02, 321});
  SessionParams p = test_params({32, 64, 128, 256}, {7, 8});

  uint64_t loop_sent, loop_recv;
  {
    auto loop = make_loopback_pair(0.0);
    std::thread alice_thread([&] {
      Session alice(Role::reference, pair.reference, *loop.a, p);
      alice.run();
    });
    Session bob(Role::correcting, pair.noisy, *loop.b, p);
    auto res = bob.run();
    alice_thread.join();
    REQUIRE(res.verified);
    loop_sent = loop.b->sent_digest();
    loop_recv = loop.b->received_digest();
  }

  uint16_t port = static_cast<uint16_t>(21000 + (::getpid() % 20000));
  std::unique_ptr<TcpTransport> server;
  std::thread alice_thread([&] {
    server = TcpTransport::listen_accept("127.0.0.1", port);
    Session alice(Role::reference, pair.reference, *server, p);
    alice.run();
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto client = TcpTransport::connect("127.0.0.1", port);
  Session bob(Role::correcting, pair.noisy, *client, p);
  auto res = bob.run();
  alice_thread.join();
  REQUIRE(res.verified);
  CHECK(client->sent_digest() == loop_sent);
  CHECK(client->received_digest() == loop_recv);
}

namespace {

// Feeds a canned reply list to a session and records what it sends.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::vector<Message> replies)
      : replies_(std::move(replies)) {}
  std::vector<Message> sent;

 protected:
  void send_frame(std::vector<uint8_t> frame) override {
    sent.push_back(decode(frame));
  }
  std::vector<uint8_t> recv_frame() override {
    if (next_ >= replies_.size()) throw TransportError("script exhausted");
    return encode(replies_[next_++]);
  }

 private:
  std::vector<Message> replies_;
  size_t next_ = 0;
};

}  // namespace

TEST_CASE("peer abort surfaces as a protocol error") {
  Message abort_msg;
  abort_msg.type = MsgType::abort;
  abort_msg.payload = AbortPayload{1, "frame length mismatch"};
  ScriptedTransport tr({abort_msg});
  BitFrame noisy(64);
  Session bob(Role::correcting, noisy, tr, test_params({8}));
  CHECK_THROWS_WITH_AS(bob.run(), "peer aborted: frame length mismatch",
                       ProtocolError);
}

TEST_CASE("wrong-sized parity vector aborts the session") {
  // Drive the reference side: a well-formed HELLO, then a parity message
  // whose count disagrees with the block partition.
  Message hello;
  hello.type = MsgType::hello;
  hello.session_id = 9;
  HelloPayload h;
  h.n = 64;
  h.qber_ppm = 10000;
  h.variant = 0;
  h.seed = {1, 2};
  hello.payload = h;

  Message parities;
  parities.type = MsgType::round_parities;
  parities.session_id = 9;
  parities.round = 1;
  parities.payload = BitsPayload{{1, 0, 1}};  // 8 blocks expected, 3 sent

  ScriptedTransport tr({hello, parities});
  BitFrame reference(64);
  SessionParams p;
  p.schedule_override = std::vector<uint64_t>{8};
  Session alice(Role::reference, reference, tr, p);
  CHECK_THROWS_AS(alice.run(), ProtocolError);
  REQUIRE_FALSE(tr.sent.empty());
  CHECK(tr.sent.back().type == MsgType::abort);
}

TEST_CASE("mid-session disconnect surfaces as a transport error") {
  auto loop = make_loopback_pair(0.0);
  BitFrame noisy(256);
  SessionParams p = test_params({16});
  std::thread dropper([&] {
    (void)loop.a->recv();  // swallow HELLO, then vanish
    loop.a.reset();
  });
  Session bob(Role::correcting, noisy, *loop.b, p);
  CHECK_THROWS_AS(bob.run(), TransportError);
  dropper.join();
}

TEST_CASE("leakage counter equals the parity bits visible on the wire") {
  uint64_t n = 2048;
  auto pair = generate_pair({n, 0.04, 1717});
  SessionParams p = test_params({16, 32, 64, 128}, {21, 12});

  class Tee : public Transport {
   public:
    Tee(Transport& inner, std::vector<Message>& log) : inner_(inner), log_(log) {}

   protected:
    void send_frame(std::vector<uint8_t> frame) override {
      Message m = cascade::decode(frame);
      log_.push_back(m);
      inner_.send(m);
    }
    std::vector<uint8_t> recv_frame() override { return encode(inner_.recv()); }

   private:
    Transport& inner_;
    std::vector<Message>& log_;
  };

  std::vector<Message> bob_sent, alice_sent;
  auto loop = make_loopback_pair(0.0);
  Tee bob_tr(*loop.b, bob_sent);
  Tee alice_tr(*loop.a, alice_sent);

  ReconciliationResult bob_res;
  std::thread alice_thread([&] {
    Session alice(Role::reference, pair.reference, alice_tr, p);
    alice.run();
  });
  Session bob(Role::correcting, pair.noisy, bob_tr, p);
  bob_res = bob.run();
  alice_thread.join();
  REQUIRE(bob_res.verified);

  uint64_t wire_parity_bits = 0;
  for (const auto& m : bob_sent)
    if (m.type == MsgType::round_parities)
      wire_parity_bits += std::get<BitsPayload>(m.payload).bits.size();
  for (const auto& m : alice_sent)
    if (m.type == MsgType::half_parities)
      wire_parity_bits += std::get<BitsPayload>(m.payload).bits.size();
  CHECK(bob_res.metrics.leaked_bits == wire_parity_bits);
}
