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

// Trainer-side client: partitioned round-robin over a capped set of worker
// connections, plus a rate-driven trainer simulator that measures stalls.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dsi/model.h"
#include "dsi/wire.h"

namespace dsi {

/// Static partition by client index: client c talks to workers
/// (c*k + j) mod N for j < k, with k = min(N, fanout).
struct RoutingTable {
  std::vector<Endpoint> workers;
  uint32_t clients = 1;
  uint32_t fanout = 4;

  uint32_t k() const { return std::min<uint32_t>(fanout, static_cast<uint32_t>(workers.size())); }
  std::vector<Endpoint> assignment(uint32_t client) const;
};

struct ClientConfig {
  std::vector<Endpoint> workers;  // this client's assignment
  uint64_t client_id = 0;
  /// All workers Pending for this long counts as one stall event.
  std::chrono::milliseconds stall_timeout{100};
  /// A worker unreachable this long is treated as finished.
  std::chrono::milliseconds give_up{std::chrono::seconds(30)};
  std::optional<Endpoint> master;  // stats are reported here when set
};

class Client {
 public:
  explicit Client(ClientConfig cfg);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// Next batch in round-robin order; nullopt once every worker reported
  /// EndOfData. Safe to call from several threads.
  std::optional<TensorBatch> next_batch();

  /// Makes blocked and future next_batch calls return nullopt until
  /// cleared. Batches already fetched are unaffected.
  void set_cancelled(bool c) { cancelled_ = c; }

  ClientStats stats() const;
  /// Sends stats to the master, if one is configured. Errors are ignored.
  void report_client_stats();

  std::vector<uint64_t> served_per_worker() const;
  uint32_t max_open_connections() const { return max_open_; }
  uint32_t open_connections() const { return open_; }

 private:
  struct Slot;
  enum class Outcome { Batch, Pending, Ended, Down, Busy };
  Outcome poll(Slot& s, std::optional<TensorBatch>& out);

  ClientConfig cfg_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::atomic<uint64_t> cursor_{0};
  std::atomic<bool> cancelled_{false};
  std::atomic<uint32_t> open_{0};
  std::atomic<uint32_t> max_open_{0};
  mutable std::mutex stats_mu_;
  ClientStats stats_;
  std::chrono::steady_clock::time_point created_;
  std::mutex master_mu_;
  Connection master_;
};

struct StallReport {
  double wall_seconds = 0.0;
  double busy_seconds = 0.0;
  double stall_seconds = 0.0;
  uint64_t batches = 0;
  bool end_of_data = false;

  double stall_fraction() const {
    double t = busy_seconds + stall_seconds;
    return t > 0 ? stall_seconds / t : 0.0;
  }
  /// One machine-readable line.
  std::string to_line() const;
  std::string to_table() const;
};

struct TrainerConfig {
  double rate = 100.0;  // batches per second of simulated compute
  double duration_seconds = 0.0;  // 0 runs until EndOfData
  uint32_t prefetch = 2;
  /// Batches consumed before accounting starts, to drain buffers that
  /// filled up before the trainer arrived.
  uint64_t warmup_batches = 0;
  /// Called for every consumed batch.
  std::function<void(const TensorBatch&)> on_batch;
};

/// Consumes a batch every 1/rate seconds; waiting for data beyond that
/// schedule is stall time. A prefetch thread keeps up to `prefetch` batches
/// ready, the way a training data loader does.
StallReport run_trainer(Client& client, const TrainerConfig& cfg);

}  // namespace dsi
