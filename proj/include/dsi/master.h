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

// Control plane: split generation and leasing, progress tracking,
// checkpoints, worker health and the buffer-driven autoscaler.

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dsi/dataset.h"
#include "dsi/model.h"
#include "dsi/wire.h"

namespace dsi {

/// Splits in delivery order. Never straddles a file; every split has
/// spec.split_size rows except the last one of each file.
/// Throws SchemaError for a partition missing from the table.
std::vector<Split> generate_splits(const SessionSpec& spec, const TableMetadata& table);

struct ScalerConfig {
  double period_seconds = 1.0;
  double buffer_floor = 2.0;  // batches per worker
  double util_ceiling = 0.85;
  uint32_t max_step = 2;
  void check() const;
};

struct FleetStats {
  uint32_t workers = 0;
  double buffered = 0.0;
  double mean_utilization = 0.0;  // mean over workers of max(cpu, network)
  bool stall = false;             // any client stalled during the period
};

/// Signed change in worker count for one evaluation period.
int evaluate_scaling(const FleetStats& fleet, const ScalerConfig& cfg);

struct AutoscaleSimConfig {
  double demand = 0.0;        // batches consumed per period
  double capacity = 20.0;     // batches produced per worker per period
  double worker_buffer = 8.0; // batches buffered per worker
  uint32_t ticks_per_period = 10;
  uint32_t periods = 20;
  uint32_t initial_workers = 1;
  ScalerConfig scaler;
};

struct AutoscalePeriod {
  uint32_t workers = 0;
  double buffered = 0.0;
  double utilization = 0.0;
  bool stall = false;
  int delta = 0;
};

/// Fluid discrete-event model of workers feeding one trainer.
std::vector<AutoscalePeriod> simulate_autoscaler(const AutoscaleSimConfig& cfg);

struct LeaseConfig {
  double ttl_seconds = 30.0;
  double heartbeat_seconds = 1.0;
  uint32_t missed_heartbeats = 3;
};

struct Checkpoint {
  uint64_t epoch = 0;
  uint64_t generation = 0;  // master incarnation; high half of worker ids
  uint64_t spec_digest = 0;
  std::string spec_json;
  uint64_t cursor = 0;
  std::vector<uint64_t> completed;  // ascending
  bool operator==(const Checkpoint&) const = default;
};

constexpr uint16_t kCheckpointVersion = 1;

std::vector<uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const uint8_t> bytes);
/// Writes dir/checkpoint-<epoch>.ckpt atomically and returns its path.
std::string save_checkpoint(const std::string& dir, const Checkpoint& c);
std::optional<Checkpoint> load_latest_checkpoint(const std::string& dir);

struct MasterMetrics {
  uint64_t splits_issued = 0;
  uint64_t splits_reissued = 0;
  uint64_t splits_completed = 0;
  uint64_t duplicate_completions = 0;
  uint64_t workers_registered = 0;
  uint64_t workers_dead = 0;
};

enum class NextKind { Assigned, Wait, EndOfData, Unregistered };

struct NextResult {
  NextKind kind = NextKind::Wait;
  std::optional<Split> split;
};

enum class HeartbeatReply { Continue, Drain, Reregister };

/// Pure session bookkeeping. Not thread-safe; Master serializes access.
/// Times are seconds on any monotonic clock.
class SessionState {
 public:
  SessionState(SessionSpec spec, std::vector<Split> splits, LeaseConfig lease = {});

  uint64_t register_worker(const std::string& endpoint, double now);
  NextResult next_split(uint64_t worker, double now);
  /// Returns true when the split had already been completed (duplicate).
  bool complete_split(uint64_t worker, uint64_t split);
  HeartbeatReply heartbeat(uint64_t worker, const WorkerStats& stats, double now);
  void client_report(uint64_t client, const ClientStats& stats);
  /// Declares silent workers dead and reclaims their and any expired leases.
  /// Returns the ids of workers declared dead.
  std::vector<uint64_t> reap(double now);

  /// Marks up to n live workers (highest id first) for draining.
  std::vector<uint64_t> drain(uint32_t n);
  FleetStats fleet(bool reset_stall);

  bool finished() const { return completed_count_ == splits_.size(); }
  uint64_t cursor() const { return cursor_; }
  const std::map<uint64_t, std::pair<uint64_t, double>>& outstanding() const { return outstanding_; }
  bool is_completed(uint64_t split) const { return split < completed_.size() && completed_[split]; }
  size_t completed_count() const { return completed_count_; }
  const std::vector<Split>& splits() const { return splits_; }
  const SessionSpec& spec() const { return spec_; }
  const MasterMetrics& metrics() const { return metrics_; }
  size_t live_workers() const;

  Checkpoint checkpoint();
  /// Throws Error when the checkpoint belongs to a different session.
  static SessionState restore(const Checkpoint& c, SessionSpec spec, std::vector<Split> splits,
                              LeaseConfig lease = {});

 private:
  struct WorkerInfo {
    std::string endpoint;
    double last_heartbeat = 0.0;
    WorkerStats stats;
    bool draining = false;
  };

  void reclaim(uint64_t split);

  SessionSpec spec_;
  std::vector<Split> splits_;
  LeaseConfig lease_;
  uint64_t cursor_ = 0;
  std::deque<uint64_t> reissue_;
  std::map<uint64_t, std::pair<uint64_t, double>> outstanding_;  // split -> (worker, deadline)
  std::vector<bool> completed_;
  size_t completed_count_ = 0;
  std::map<uint64_t, WorkerInfo> workers_;
  std::map<uint64_t, uint64_t> client_stalls_;
  bool stalled_ = false;
  uint64_t generation_ = 0;
  uint64_t next_worker_ = 1;
  uint64_t epoch_ = 0;
  MasterMetrics metrics_;
};

struct MasterConfig {
  Endpoint listen;
  LeaseConfig lease;
  std::string checkpoint_dir;  // empty disables checkpoints
  double checkpoint_seconds = 1.0;
  bool autoscale = false;
  ScalerConfig scaler;
  /// Called from the scaler timer with a positive delta; launching workers
  /// is the caller's business.
  std::function<void(int)> launch;
};

/// TCP front end around SessionState.
class Master {
 public:
  Master(SessionState state, MasterConfig cfg);
  ~Master();
  Master(const Master&) = delete;
  Master& operator=(const Master&) = delete;

  void start();
  /// Stops serving without writing a final checkpoint.
  void stop();
  uint16_t port() const;
  Endpoint endpoint() const;

  std::string checkpoint_now();
  /// Asks up to n workers to finish their leases and stop.
  std::vector<uint64_t> drain(uint32_t n);
  bool finished() const;
  MasterMetrics metrics() const;
  /// Runs f under the state lock.
  void inspect(const std::function<void(const SessionState&)>& f) const;

 private:
  void accept_loop();
  void serve(std::shared_ptr<Connection> conn);
  Frame handle(const Frame& req);
  void timer_loop();
  double now() const;

  mutable std::mutex mu_;
  SessionState state_;
  MasterConfig cfg_;
  std::unique_ptr<Listener> listener_;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::thread timer_thread_;
  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> handlers_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace dsi
