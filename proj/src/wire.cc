// Copyright 2026 The DSI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dsi/wire.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace dsi {

std::vector<uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() + 1 > kMaxFrameBytes) throw Error("frame too large");
  ByteWriter w;
  w.u32(static_cast<uint32_t>(f.payload.size() + 1));
  w.u8(static_cast<uint8_t>(f.type));
  w.bytes(f.payload);
  return w.take();
}

Frame decode_frame(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  uint32_t len = r.u32();
  if (len == 0 || len > kMaxFrameBytes) throw FormatError("bad frame length");
  if (len != r.remaining()) throw FormatError("frame length does not match buffer");
  Frame f;
  f.type = static_cast<MsgType>(r.u8());
  auto p = r.bytes(len - 1);
  f.payload.assign(p.begin(), p.end());
  return f;
}

Endpoint Endpoint::parse(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error("endpoint must be host:port, got '" + s + "'");
  Endpoint ep;
  ep.host = s.substr(0, colon);
  int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw Error("port out of range in '" + s + "'");
  ep.port = static_cast<uint16_t>(port);
  return ep;
}

namespace {

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) throw IoError("cannot resolve " + ep.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void write_all(int fd, const uint8_t* p, size_t n) {
  while (n > 0) {
    ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("send: ") + std::strerror(errno));
    }
    p += k;
    n -= static_cast<size_t>(k);
  }
}

// Returns false on orderly close before the first byte.
bool read_all(int fd, uint8_t* p, size_t n) {
  size_t got = 0;
  while (got < n) {
    ssize_t k = ::recv(fd, p + got, n - got, 0);
    if (k == 0) {
      if (got == 0) return false;
      throw IoError("connection closed mid-frame");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<size_t>(k);
  }
  return true;
}

}  // namespace

Connection::~Connection() { close(); }

Connection& Connection::operator=(Connection&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

Connection Connection::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
  sockaddr_in addr = resolve(ep);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  if (rc < 0 && errno != EINPROGRESS) {
    int e = errno;
    ::close(fd);
    throw IoError("connect " + ep.str() + ": " + std::strerror(e));
  }
  if (rc < 0) {
    pollfd pfd{fd, POLLOUT, 0};
    rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    int err = 0;
    socklen_t len = sizeof err;
    if (rc <= 0 || getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) < 0 || err != 0) {
      ::close(fd);
      throw IoError("connect " + ep.str() + ": " + (rc == 0 ? "timed out" : std::strerror(err ? err : errno)));
    }
  }
  fcntl(fd, F_SETFL, flags);
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Connection(fd);
}

void Connection::send(const Frame& f) {
  if (fd_ < 0) throw IoError("send on closed connection");
  auto bytes = encode_frame(f);
  write_all(fd_, bytes.data(), bytes.size());
}

std::optional<Frame> Connection::recv() {
  if (fd_ < 0) throw IoError("recv on closed connection");
  uint8_t head[5];
  if (!read_all(fd_, head, 4)) return std::nullopt;
  uint32_t len = static_cast<uint32_t>(head[0]) | static_cast<uint32_t>(head[1]) << 8 |
                 static_cast<uint32_t>(head[2]) << 16 | static_cast<uint32_t>(head[3]) << 24;
  if (len == 0 || len > kMaxFrameBytes) throw FormatError("bad frame length " + std::to_string(len));
  if (!read_all(fd_, head + 4, 1)) throw IoError("connection closed mid-frame");
  Frame f;
  f.type = static_cast<MsgType>(head[4]);
  f.payload.resize(len - 1);
  if (len > 1 && !read_all(fd_, f.payload.data(), len - 1)) throw IoError("connection closed mid-frame");
  return f;
}

Frame Connection::call(const Frame& f) {
  send(f);
  auto r = recv();
  if (!r) throw IoError("peer closed connection");
  return std::move(*r);
}

void Connection::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Connection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Listener::Listener(const Endpoint& ep) {
  sockaddr_in addr = resolve(ep);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 128) < 0) {
    int e = errno;
    ::close(fd_);
    fd_ = -1;
    throw IoError("listen " + ep.str() + ": " + std::strerror(e));
  }
  socklen_t len = sizeof addr;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<Connection> Listener::accept(std::chrono::milliseconds timeout) {
  if (fd_ < 0) return std::nullopt;
  pollfd pfd{fd_, POLLIN, 0};
  int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (rc <= 0 || !(pfd.revents & POLLIN)) return std::nullopt;
  int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (c < 0) return std::nullopt;
  int one = 1;
  setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Connection(c);
}

void Listener::shutdown() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

void expect_type(const Frame& f, MsgType t) {
  if (f.type != t)
    throw FormatError("expected message type " + std::to_string(static_cast<int>(t)) + ", got " +
                      std::to_string(static_cast<int>(f.type)));
}

namespace {

Frame make(MsgType t, ByteWriter& w) { return Frame{t, w.take()}; }

void finish(const ByteReader& r) {
  if (!r.done()) throw FormatError("trailing bytes in message");
}

// Rejects element counts that cannot fit in what is left of the buffer.
size_t count(ByteReader& r, size_t elem) {
  uint64_t n = r.u32();
  if (n * elem > r.remaining()) throw FormatError("element count exceeds payload");
  return static_cast<size_t>(n);
}

}  // namespace

void write_split(ByteWriter& w, const Split& s) {
  w.u64(s.id);
  w.str(s.path);
  w.u32(s.first_stripe);
  w.u32(s.last_stripe);
  w.u64(s.first_row);
  w.u64(s.last_row);
  w.u64(s.file_first_row);
}

Split read_split(ByteReader& r) {
  Split s;
  s.id = r.u64();
  s.path = r.str();
  s.first_stripe = r.u32();
  s.last_stripe = r.u32();
  s.first_row = r.u64();
  s.last_row = r.u64();
  s.file_first_row = r.u64();
  if (s.last_row < s.first_row || s.last_stripe < s.first_stripe) throw FormatError("inverted split range");
  return s;
}

void write_batch(ByteWriter& w, const TensorBatch& b) {
  w.u64(b.batch_id);
  w.u64(b.split_id);
  w.u32(b.rows);
  w.u32(static_cast<uint32_t>(b.labels.size()));
  for (float x : b.labels) w.f32(x);
  w.u32(static_cast<uint32_t>(b.row_ids.size()));
  for (uint64_t x : b.row_ids) w.u64(x);
  w.u32(static_cast<uint32_t>(b.dense.size()));
  for (const auto& d : b.dense) {
    w.u32(d.feature);
    w.u32(d.width);
    w.u32(static_cast<uint32_t>(d.values.size()));
    for (float x : d.values) w.f32(x);
  }
  w.u32(static_cast<uint32_t>(b.sparse.size()));
  for (const auto& s : b.sparse) {
    w.u32(s.feature);
    w.u32(static_cast<uint32_t>(s.values.size()));
    for (int64_t x : s.values) w.i64(x);
    w.u32(static_cast<uint32_t>(s.offsets.size()));
    for (int32_t x : s.offsets) w.u32(static_cast<uint32_t>(x));
    w.u32(static_cast<uint32_t>(s.scores.size()));
    for (float x : s.scores) w.f32(x);
  }
}

TensorBatch read_batch(ByteReader& r) {
  TensorBatch b;
  b.batch_id = r.u64();
  b.split_id = r.u64();
  b.rows = r.u32();
  b.labels.resize(count(r, 4));
  for (auto& x : b.labels) x = r.f32();
  b.row_ids.resize(count(r, 8));
  for (auto& x : b.row_ids) x = r.u64();
  b.dense.resize(count(r, 12));
  for (auto& d : b.dense) {
    d.feature = r.u32();
    d.width = r.u32();
    d.values.resize(count(r, 4));
    for (auto& x : d.values) x = r.f32();
  }
  b.sparse.resize(count(r, 16));
  for (auto& s : b.sparse) {
    s.feature = r.u32();
    s.values.resize(count(r, 8));
    for (auto& x : s.values) x = r.i64();
    s.offsets.resize(count(r, 4));
    for (auto& x : s.offsets) x = static_cast<int32_t>(r.u32());
    s.scores.resize(count(r, 4));
    for (auto& x : s.scores) x = r.f32();
  }
  if (!b.valid()) throw FormatError("batch buffers disagree with row count");
  return b;
}

Frame encode(const RegisterRequest& m) {
  ByteWriter w;
  w.str(m.endpoint);
  return make(MsgType::RegisterWorker, w);
}

Frame encode(const RegisterReply& m) {
  ByteWriter w;
  w.u64(m.worker_id);
  w.str(m.session_json);
  w.u32(m.heartbeat_ms);
  return make(MsgType::RegisterWorker, w);
}

Frame encode_next_split(uint64_t worker_id) {
  ByteWriter w;
  w.u64(worker_id);
  return make(MsgType::NextSplit, w);
}

Frame encode_assign(AssignStatus status, const Split* split) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(status));
  if (status == AssignStatus::Assigned) {
    if (!split) throw Error("assignment without a split");
    write_split(w, *split);
  }
  return make(MsgType::SplitAssign, w);
}

Frame encode_complete(uint64_t worker_id, uint64_t split_id) {
  ByteWriter w;
  w.u64(worker_id);
  w.u64(split_id);
  return make(MsgType::CompleteSplit, w);
}

Frame encode_complete_ack(bool duplicate) {
  ByteWriter w;
  w.u8(duplicate ? 1 : 0);
  return make(MsgType::CompleteSplit, w);
}

Frame encode(const HeartbeatRequest& m) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(m.role));
  w.u64(m.id);
  if (m.role == Role::Worker) {
    w.f64(m.worker.cpu);
    w.f64(m.worker.memory);
    w.f64(m.worker.network);
    w.u32(m.worker.buffered_batches);
    w.u64(m.worker.splits_completed);
  } else {
    w.u64(m.client.stall_events);
    w.f64(m.client.stall_seconds);
    w.f64(m.client.wall_seconds);
  }
  return make(MsgType::Heartbeat, w);
}

Frame encode_heartbeat_reply(Directive d) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(d));
  return make(MsgType::Heartbeat, w);
}

Frame encode_drain() { return Frame{MsgType::Drain, {}}; }

Frame encode_get_batch(uint64_t client_id) {
  ByteWriter w;
  w.u64(client_id);
  return make(MsgType::GetBatch, w);
}

Frame encode_batch_reply(const TensorBatch* batch) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(batch ? BatchStatus::Ready : BatchStatus::Pending));
  if (batch) write_batch(w, *batch);
  return make(MsgType::Batch, w);
}

Frame encode_end_of_data() { return Frame{MsgType::EndOfData, {}}; }

RegisterRequest decode_register_request(const Frame& f) {
  expect_type(f, MsgType::RegisterWorker);
  ByteReader r(f.payload);
  RegisterRequest m{r.str()};
  finish(r);
  return m;
}

RegisterReply decode_register_reply(const Frame& f) {
  expect_type(f, MsgType::RegisterWorker);
  ByteReader r(f.payload);
  RegisterReply m;
  m.worker_id = r.u64();
  m.session_json = r.str();
  m.heartbeat_ms = r.u32();
  finish(r);
  return m;
}

uint64_t decode_next_split(const Frame& f) {
  expect_type(f, MsgType::NextSplit);
  ByteReader r(f.payload);
  uint64_t id = r.u64();
  finish(r);
  return id;
}

std::pair<AssignStatus, std::optional<Split>> decode_assign(const Frame& f) {
  expect_type(f, MsgType::SplitAssign);
  ByteReader r(f.payload);
  uint8_t s = r.u8();
  if (s > 2) throw FormatError("bad assignment status");
  std::optional<Split> split;
  if (s == static_cast<uint8_t>(AssignStatus::Assigned)) split = read_split(r);
  finish(r);
  return {static_cast<AssignStatus>(s), split};
}

std::pair<uint64_t, uint64_t> decode_complete(const Frame& f) {
  expect_type(f, MsgType::CompleteSplit);
  ByteReader r(f.payload);
  uint64_t w = r.u64();
  uint64_t s = r.u64();
  finish(r);
  return {w, s};
}

bool decode_complete_ack(const Frame& f) {
  expect_type(f, MsgType::CompleteSplit);
  ByteReader r(f.payload);
  bool dup = r.u8() != 0;
  finish(r);
  return dup;
}

HeartbeatRequest decode_heartbeat(const Frame& f) {
  expect_type(f, MsgType::Heartbeat);
  ByteReader r(f.payload);
  HeartbeatRequest m;
  uint8_t role = r.u8();
  if (role > 1) throw FormatError("bad heartbeat role");
  m.role = static_cast<Role>(role);
  m.id = r.u64();
  if (m.role == Role::Worker) {
    m.worker.cpu = r.f64();
    m.worker.memory = r.f64();
    m.worker.network = r.f64();
    m.worker.buffered_batches = r.u32();
    m.worker.splits_completed = r.u64();
  } else {
    m.client.stall_events = r.u64();
    m.client.stall_seconds = r.f64();
    m.client.wall_seconds = r.f64();
  }
  finish(r);
  return m;
}

Directive decode_heartbeat_reply(const Frame& f) {
  expect_type(f, MsgType::Heartbeat);
  ByteReader r(f.payload);
  uint8_t d = r.u8();
  if (d > 1) throw FormatError("bad directive");
  finish(r);
  return static_cast<Directive>(d);
}

uint64_t decode_get_batch(const Frame& f) {
  expect_type(f, MsgType::GetBatch);
  ByteReader r(f.payload);
  uint64_t id = r.u64();
  finish(r);
  return id;
}

std::optional<TensorBatch> decode_batch_reply(const Frame& f) {
  expect_type(f, MsgType::Batch);
  ByteReader r(f.payload);
  uint8_t s = r.u8();
  if (s > 1) throw FormatError("bad batch status");
  std::optional<TensorBatch> b;
  if (s == 1) b = read_batch(r);
  finish(r);
  return b;
}

}  // namespace dsi
