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

#pragma once

// Length-prefixed binary framing over TCP and the message codecs shared by
// master, workers and clients. See docs/wire.md.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dsi/bytes.h"
#include "dsi/model.h"

namespace dsi {

enum class MsgType : uint8_t {
  RegisterWorker = 1,
  NextSplit = 2,
  SplitAssign = 3,
  CompleteSplit = 4,
  Heartbeat = 5,
  Drain = 6,
  GetBatch = 7,
  Batch = 8,
  EndOfData = 9,
  Checkpoint = 32,  // only ever written to checkpoint files
};

constexpr uint32_t kMaxFrameBytes = 256u << 20;

struct Frame {
  MsgType type = MsgType::EndOfData;
  std::vector<uint8_t> payload;
};

/// [u32 length][u8 type][payload]; length counts the type byte.
std::vector<uint8_t> encode_frame(const Frame& f);
/// Parses exactly one frame occupying all of bytes.
Frame decode_frame(std::span<const uint8_t> bytes);

struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = 0;
  std::string str() const { return host + ":" + std::to_string(port); }
  static Endpoint parse(const std::string& s);
  bool operator==(const Endpoint&) const = default;
};

/// Blocking TCP connection. send/recv throw IoError on failure; recv returns
/// nullopt on orderly close.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  ~Connection();
  Connection(Connection&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Connection& operator=(Connection&& o) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  static Connection connect(const Endpoint& ep, std::chrono::milliseconds timeout = std::chrono::seconds(2));

  bool valid() const { return fd_ >= 0; }
  void send(const Frame& f);
  std::optional<Frame> recv();
  Frame call(const Frame& f);  // send then recv; closed peer is an IoError
  /// Unblocks any thread waiting in recv on this connection.
  void shutdown();
  void close();

 private:
  int fd_ = -1;
};

class Listener {
 public:
  /// Port 0 picks an ephemeral port.
  explicit Listener(const Endpoint& ep);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  uint16_t port() const { return port_; }
  /// Waits up to timeout; nullopt on timeout or after shutdown().
  std::optional<Connection> accept(std::chrono::milliseconds timeout);
  void shutdown();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Message payloads.

enum class Role : uint8_t { Worker = 0, Client = 1 };
enum class Directive : uint8_t { Continue = 0, Reregister = 1 };  // Drain has its own frame type
enum class AssignStatus : uint8_t { Wait = 0, Assigned = 1, Unregistered = 2 };
enum class BatchStatus : uint8_t { Pending = 0, Ready = 1 };

struct RegisterRequest {
  std::string endpoint;
};
struct RegisterReply {
  uint64_t worker_id = 0;
  std::string session_json;
  uint32_t heartbeat_ms = 1000;
};
struct ClientStats {
  uint64_t stall_events = 0;
  double stall_seconds = 0.0;
  double wall_seconds = 0.0;
};
struct HeartbeatRequest {
  Role role = Role::Worker;
  uint64_t id = 0;
  WorkerStats worker;
  ClientStats client;
};

Frame encode(const RegisterRequest& m);
Frame encode(const RegisterReply& m);
Frame encode_next_split(uint64_t worker_id);
Frame encode_assign(AssignStatus status, const Split* split);
Frame encode_complete(uint64_t worker_id, uint64_t split_id);
Frame encode_complete_ack(bool duplicate);
Frame encode(const HeartbeatRequest& m);
Frame encode_heartbeat_reply(Directive d);
Frame encode_drain();
Frame encode_get_batch(uint64_t client_id);
Frame encode_batch_reply(const TensorBatch* batch);  // nullptr means Pending
Frame encode_end_of_data();

RegisterRequest decode_register_request(const Frame& f);
RegisterReply decode_register_reply(const Frame& f);
uint64_t decode_next_split(const Frame& f);
std::pair<AssignStatus, std::optional<Split>> decode_assign(const Frame& f);
std::pair<uint64_t, uint64_t> decode_complete(const Frame& f);
bool decode_complete_ack(const Frame& f);
HeartbeatRequest decode_heartbeat(const Frame& f);
Directive decode_heartbeat_reply(const Frame& f);
uint64_t decode_get_batch(const Frame& f);
std::optional<TensorBatch> decode_batch_reply(const Frame& f);

void write_split(ByteWriter& w, const Split& s);
Split read_split(ByteReader& r);
void write_batch(ByteWriter& w, const TensorBatch& b);
TensorBatch read_batch(ByteReader& r);

/// Throws FormatError unless f has the expected type.
void expect_type(const Frame& f, MsgType t);

}  // namespace dsi
