#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cascade/permute.hpp"

namespace cascade {

struct WireError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class MsgType : uint8_t {
  hello = 1,
  schedule = 2,
  round_parities = 3,
  mismatch_mask = 4,
  half_parities = 5,
  direction_mask = 6,
  digest = 7,
  abort = 8,
};

const char* msg_type_name(MsgType t);

struct HelloPayload {
  uint16_t version = 1;
  uint64_t n = 0;
  uint32_t qber_ppm = 0;
  uint8_t variant = 0;
  Seed128 seed;
  bool operator==(const HelloPayload&) const = default;
};

// Echo of the accepted parameters plus the explicit per-round partition
// sizes; the echoed sizes are authoritative for the session.
struct SchedulePayload {
  HelloPayload accepted;
  std::vector<uint64_t> sizes;
  bool operator==(const SchedulePayload&) const = default;
};

// Parity or mask bits, one per block, values 0/1.
struct BitsPayload {
  std::vector<uint8_t> bits;
  bool operator==(const BitsPayload&) const = default;
};

struct DigestPayload {
  uint64_t digest = 0;
  bool operator==(const DigestPayload&) const = default;
};

struct AbortPayload {
  uint32_t code = 0;
  std::string reason;
  bool operator==(const AbortPayload&) const = default;
};

struct Message {
  MsgType type = MsgType::abort;
  uint16_t session_id = 0;
  uint32_t round = 0;
  std::variant<HelloPayload, SchedulePayload, BitsPayload, DigestPayload,
               AbortPayload>
      payload;
  bool operator==(const Message&) const = default;
};

// Wire layout: length (u32 LE, excluding itself) | type (u8) |
// session id (u16 LE) | round (u32 LE) | payload. Parity/mask payloads are
// a u32 LE count followed by the bits packed LSB-first. encode returns the
// full wire frame including the length prefix; decode accepts the same.
std::vector<uint8_t> encode(const Message& m);
Message decode(std::span<const uint8_t> frame);

struct TransportCounters {
  uint64_t messages_sent = 0;
  uint64_t messages_received = 0;
  uint64_t bytes_sent = 0;
  uint64_t bytes_received = 0;
  double wait_seconds = 0;  // time blocked in recv
};

// Reliable, ordered, message-framed channel between the two parties.
class Transport {
 public:
  virtual ~Transport() = default;

  void send(const Message& m);
  Message recv();

  const TransportCounters& counters() const { return counters_; }
  // FNV-1a over all bytes sent / received, for transcript comparison.
  uint64_t sent_digest() const { return sent_digest_; }
  uint64_t received_digest() const { return received_digest_; }

 protected:
  virtual void send_frame(std::vector<uint8_t> frame) = 0;
  virtual std::vector<uint8_t> recv_frame() = 0;

 private:
  TransportCounters counters_;
  uint64_t sent_digest_ = 14695981039346656037ull;
  uint64_t received_digest_ = 14695981039346656037ull;
};

// In-process pair of endpoints with injected one-way latency: a message is
// never delivered earlier than send time + latency. FIFO both ways.
class LoopbackTransport;
struct LoopbackPair {
  std::shared_ptr<LoopbackTransport> a;  // give to one party
  std::shared_ptr<LoopbackTransport> b;  // give to the other
};
LoopbackPair make_loopback_pair(double one_way_latency_ms);

class LoopbackTransport : public Transport {
 public:
  ~LoopbackTransport() override;

 protected:
  void send_frame(std::vector<uint8_t> frame) override;
  std::vector<uint8_t> recv_frame() override;

 private:
  friend LoopbackPair make_loopback_pair(double one_way_latency_ms);
  struct Queue;
  std::shared_ptr<Queue> out_;
  std::shared_ptr<Queue> in_;
};

// Plain stream-socket backend. No latency injection; the real network
// provides it. The stream may be tunneled externally if authentication or
// encryption is needed.
class TcpTransport : public Transport {
 public:
  // Binds, listens and accepts exactly one peer.
  static std::unique_ptr<TcpTransport> listen_accept(const std::string& host,
                                                     uint16_t port);
  static std::unique_ptr<TcpTransport> connect(const std::string& host,
                                               uint16_t port);
  ~TcpTransport() override;

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

 protected:
  void send_frame(std::vector<uint8_t> frame) override;
  std::vector<uint8_t> recv_frame() override;

 private:
  explicit TcpTransport(int fd) : fd_(fd) {}
  int fd_ = -1;
};

}  // namespace cascade
