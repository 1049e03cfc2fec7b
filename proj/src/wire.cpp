#include "cascade/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <limits>

namespace cascade {

namespace {

constexpr uint64_t kFnvOffset = 14695981039346656037ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;
constexpr uint32_t kMaxFrameBytes = 1u << 30;

uint64_t fnv1a(uint64_t h, std::span<const uint8_t> data) {
  for (uint8_t b : data) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  std::span<const uint8_t> data;
  size_t pos = 0;

  void need(size_t k) const {
    if (pos + k > data.size()) throw WireError("wire: truncated message");
  }
  uint8_t u8() {
    need(1);
    return data[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t{data[pos + i]} << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t{data[pos + i]} << (8 * i);
    pos += 8;
    return v;
  }
};

void put_hello(std::vector<uint8_t>& out, const HelloPayload& h) {
  put_u16(out, h.version);
  put_u64(out, h.n);
  put_u32(out, h.qber_ppm);
  out.push_back(h.variant);
  put_u64(out, h.seed.lo);
  put_u64(out, h.seed.hi);
}

HelloPayload read_hello(Reader& r) {
  HelloPayload h;
  h.version = r.u16();
  h.n = r.u64();
  h.qber_ppm = r.u32();
  h.variant = r.u8();
  h.seed.lo = r.u64();
  h.seed.hi = r.u64();
  return h;
}

void put_bits(std::vector<uint8_t>& out, const std::vector<uint8_t>& bits) {
  if (bits.size() > std::numeric_limits<uint32_t>::max())
    throw WireError("wire: bit payload too large");
  put_u32(out, static_cast<uint32_t>(bits.size()));
  size_t start = out.size();
  out.resize(start + (bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[start + i / 8] |= uint8_t{1} << (i % 8);
}

std::vector<uint8_t> read_bits(Reader& r) {
  uint32_t count = r.u32();
  size_t nbytes = (size_t{count} + 7) / 8;
  r.need(nbytes);
  std::vector<uint8_t> bits(count);
  for (uint32_t i = 0; i < count; ++i)
    bits[i] = (r.data[r.pos + i / 8] >> (i % 8)) & 1;
  r.pos += nbytes;
  return bits;
}

}  // namespace

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::schedule: return "SCHEDULE";
    case MsgType::round_parities: return "ROUND_PARITIES";
    case MsgType::mismatch_mask: return "MISMATCH_MASK";
    case MsgType::half_parities: return "HALF_PARITIES";
    case MsgType::direction_mask: return "DIRECTION_MASK";
    case MsgType::digest: return "DIGEST";
    case MsgType::abort: return "ABORT";
  }
  return "UNKNOWN";
}

std::vector<uint8_t> encode(const Message& m) {
  std::vector<uint8_t> out;
  put_u32(out, 0);  // length, patched below
  out.push_back(static_cast<uint8_t>(m.type));
  put_u16(out, m.session_id);
  put_u32(out, m.round);

  switch (m.type) {
    case MsgType::hello:
      put_hello(out, std::get<HelloPayload>(m.payload));
      break;
    case MsgType::schedule: {
      const auto& s = std::get<SchedulePayload>(m.payload);
      put_hello(out, s.accepted);
      put_u32(out, static_cast<uint32_t>(s.sizes.size()));
      for (uint64_t k : s.sizes) put_u64(out, k);
      break;
    }
    case MsgType::round_parities:
    case MsgType::mismatch_mask:
    case MsgType::half_parities:
    case MsgType::direction_mask:
      put_bits(out, std::get<BitsPayload>(m.payload).bits);
      break;
    case MsgType::digest:
      put_u64(out, std::get<DigestPayload>(m.payload).digest);
      break;
    case MsgType::abort: {
      const auto& a = std::get<AbortPayload>(m.payload);
      put_u32(out, a.code);
      put_u32(out, static_cast<uint32_t>(a.reason.size()));
      out.insert(out.end(), a.reason.begin(), a.reason.end());
      break;
    }
  }

  uint64_t body = out.size() - 4;
  if (body > kMaxFrameBytes) throw WireError("wire: message exceeds size limit");
  uint32_t len = static_cast<uint32_t>(body);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<uint8_t>(len >> (8 * i));
  return out;
}

Message decode(std::span<const uint8_t> frame) {
  Reader r{frame};
  uint32_t len = r.u32();
  if (len + 4 != frame.size()) throw WireError("wire: length prefix mismatch");

  Message m;
  uint8_t type = r.u8();
  if (type < 1 || type > 8) throw WireError("wire: unknown message type");
  m.type = static_cast<MsgType>(type);
  m.session_id = r.u16();
  m.round = r.u32();

  switch (m.type) {
    case MsgType::hello:
      m.payload = read_hello(r);
      break;
    case MsgType::schedule: {
      SchedulePayload s;
      s.accepted = read_hello(r);
      uint32_t count = r.u32();
      s.sizes.reserve(count);
      for (uint32_t i = 0; i < count; ++i) s.sizes.push_back(r.u64());
      m.payload = std::move(s);
      break;
    }
    case MsgType::round_parities:
    case MsgType::mismatch_mask:
    case MsgType::half_parities:
    case MsgType::direction_mask:
      m.payload = BitsPayload{read_bits(r)};
      break;
    case MsgType::digest:
      m.payload = DigestPayload{r.u64()};
      break;
    case MsgType::abort: {
      AbortPayload a;
      a.code = r.u32();
      uint32_t rlen = r.u32();
      r.need(rlen);
      a.reason.assign(r.data.begin() + r.pos, r.data.begin() + r.pos + rlen);
      r.pos += rlen;
      m.payload = std::move(a);
      break;
    }
  }
  if (r.pos != frame.size()) throw WireError("wire: trailing bytes");
  return m;
}

// --- Transport base ------------------------------------------------------

void Transport::send(const Message& m) {
  auto frame = encode(m);
  counters_.messages_sent += 1;
  counters_.bytes_sent += frame.size();
  sent_digest_ = fnv1a(sent_digest_, frame);
  send_frame(std::move(frame));
}

Message Transport::recv() {
  auto t0 = std::chrono::steady_clock::now();
  auto frame = recv_frame();
  counters_.wait_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  counters_.messages_received += 1;
  counters_.bytes_received += frame.size();
  received_digest_ = fnv1a(received_digest_, frame);
  return decode(frame);
}

// --- Loopback ------------------------------------------------------------

struct LoopbackTransport::Queue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<std::chrono::steady_clock::time_point, std::vector<uint8_t>>>
      items;
  std::chrono::nanoseconds latency{0};
  bool closed = false;
};

LoopbackPair make_loopback_pair(double one_way_latency_ms) {
  auto q_ab = std::make_shared<LoopbackTransport::Queue>();
  auto q_ba = std::make_shared<LoopbackTransport::Queue>();
  auto lat = std::chrono::nanoseconds(
      static_cast<int64_t>(one_way_latency_ms * 1e6));
  q_ab->latency = lat;
  q_ba->latency = lat;

  LoopbackPair pair;
  pair.a = std::shared_ptr<LoopbackTransport>(new LoopbackTransport());
  pair.b = std::shared_ptr<LoopbackTransport>(new LoopbackTransport());
  pair.a->out_ = q_ab;
  pair.a->in_ = q_ba;
  pair.b->out_ = q_ba;
  pair.b->in_ = q_ab;
  return pair;
}

LoopbackTransport::~LoopbackTransport() {
  for (auto& q : {out_, in_}) {
    if (!q) continue;
    std::lock_guard lock(q->mu);
    q->closed = true;
    q->cv.notify_all();
  }
}

void LoopbackTransport::send_frame(std::vector<uint8_t> frame) {
  std::lock_guard lock(out_->mu);
  if (out_->closed) throw TransportError("loopback: peer closed");
  out_->items.emplace_back(std::chrono::steady_clock::now() + out_->latency,
                           std::move(frame));
  out_->cv.notify_all();
}

std::vector<uint8_t> LoopbackTransport::recv_frame() {
  std::unique_lock lock(in_->mu);
  for (;;) {
    if (!in_->items.empty()) {
      auto due = in_->items.front().first;
      if (std::chrono::steady_clock::now() >= due) {
        auto frame = std::move(in_->items.front().second);
        in_->items.pop_front();
        return frame;
      }
      in_->cv.wait_until(lock, due);
    } else if (in_->closed) {
      throw TransportError("loopback: peer closed");
    } else {
      in_->cv.wait(lock);
    }
  }
}

// --- TCP -----------------------------------------------------------------

namespace {

void write_all(int fd, const uint8_t* data, size_t len) {
  while (len > 0) {
    ssize_t w = ::write(fd, data, len);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("tcp write: ") + std::strerror(errno));
    }
    data += w;
    len -= static_cast<size_t>(w);
  }
}

void read_all(int fd, uint8_t* data, size_t len) {
  while (len > 0) {
    ssize_t r = ::read(fd, data, len);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("tcp read: ") + std::strerror(errno));
    }
    if (r == 0) throw TransportError("tcp read: peer closed");
    data += r;
    len -= static_cast<size_t>(r);
  }
}

int resolve_and(const std::string& host, uint16_t port, bool server) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (server) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string port_str = std::to_string(port);
  int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port_str.c_str(),
                         &hints, &res);
  if (rc != 0) throw TransportError(std::string("tcp resolve: ") + gai_strerror(rc));

  int fd = -1;
  std::string err = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (server) {
      int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 1) == 0)
        break;
    } else {
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    }
    err = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw TransportError("tcp " + std::string(server ? "listen" : "connect") +
                         ": " + err);
  return fd;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

std::unique_ptr<TcpTransport> TcpTransport::listen_accept(const std::string& host,
                                                          uint16_t port) {
  int lfd = resolve_and(host, port, true);
  int fd = ::accept(lfd, nullptr, nullptr);
  ::close(lfd);
  if (fd < 0)
    throw TransportError(std::string("tcp accept: ") + std::strerror(errno));
  set_nodelay(fd);
  return std::unique_ptr<TcpTransport>(new TcpTransport(fd));
}

std::unique_ptr<TcpTransport> TcpTransport::connect(const std::string& host,
                                                    uint16_t port) {
  int fd = resolve_and(host, port, false);
  set_nodelay(fd);
  return std::unique_ptr<TcpTransport>(new TcpTransport(fd));
}

TcpTransport::~TcpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpTransport::send_frame(std::vector<uint8_t> frame) {
  write_all(fd_, frame.data(), frame.size());
}

std::vector<uint8_t> TcpTransport::recv_frame() {
  uint8_t head[4];
  read_all(fd_, head, 4);
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= uint32_t{head[i]} << (8 * i);
  if (len > kMaxFrameBytes) throw TransportError("tcp: oversized frame");
  std::vector<uint8_t> frame(4 + len);
  std::memcpy(frame.data(), head, 4);
  read_all(fd_, frame.data() + 4, len);
  return frame;
}

}  // namespace cascade
