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

// Stateless data-plane node: leases splits from the master, reads and
// transforms them through a bounded pipeline, and serves tensor batches.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dsi/columnar.h"
#include "dsi/executor.h"
#include "dsi/io_planner.h"
#include "dsi/model.h"
#include "dsi/wire.h"

namespace dsi {

struct WorkerConfig {
  Endpoint master;
  Endpoint listen;  // port 0 picks one
  uint32_t buffer_capacity = 8;
  uint32_t extract_tasks = 1;
  uint32_t transform_tasks = 1;
  uint64_t window_bytes = kDefaultCoalesceWindow;
  /// Caps batch production; 0 means unthrottled.
  double max_batches_per_second = 0.0;
  /// Gives up reconnecting to the master after this long.
  double master_retry_seconds = 30.0;

  void check() const;
  /// key=value lines; unknown keys are an error. '#' starts a comment.
  static WorkerConfig parse(const std::string& text);
};

/// Reads a split into a flatmap and runs the graph over it. This is the
/// whole per-split data path, shared by the service and the harness.
class SplitProcessor {
 public:
  SplitProcessor(const SessionSpec& spec, uint64_t window_bytes);

  /// Coalesced read of the split's stripes, decoded straight into a
  /// flatmap and trimmed to the split's rows.
  InMemoryRowGroup extract(const Split& split);
  std::vector<TensorBatch> transform(const InMemoryRowGroup& rows, const Split& split, ExecStats* stats = nullptr);
  std::vector<TensorBatch> run(const Split& split, ExecStats* stats = nullptr);

 private:
  struct Opened {
    std::shared_ptr<const TableReader> reader;
    std::shared_ptr<const CompiledGraph> graph;
  };
  Opened open(const std::string& path);

  SessionSpec spec_;
  uint64_t window_;
  std::mutex mu_;
  std::map<std::string, Opened> files_;
};

/// FIFO of batches shared by the pipeline (producer) and the serve path.
class BatchBuffer {
 public:
  explicit BatchBuffer(size_t capacity) : capacity_(capacity) {}

  /// Blocks while full; false once closed.
  bool push(TensorBatch b);
  std::optional<TensorBatch> try_pop();
  /// Returns a popped batch to the head, ignoring capacity.
  void unget(TensorBatch b);
  size_t size() const;
  size_t capacity() const { return capacity_; }
  void close();

 private:
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::deque<TensorBatch> q_;
  size_t capacity_;
  bool closed_ = false;
};

class Worker {
 public:
  explicit Worker(WorkerConfig cfg);
  ~Worker();
  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  /// Registers with the master and starts the pipeline and server.
  void start();
  /// Abrupt failure: drops buffered batches and all connections at once.
  void kill();
  /// Orderly shutdown of a worker that is no longer needed.
  void stop();
  /// Blocks until every batch is served after EndOfData, or kill().
  void wait();
  bool done() const { return done_; }

  uint16_t port() const;
  Endpoint endpoint() const;
  WorkerStats report_stats();
  uint64_t batches_served() const { return served_; }
  size_t max_buffered() const { return max_buffered_; }

 private:
  class MasterLink;

  void fetch_loop();
  void extract_loop();
  void transform_loop();
  void accept_loop();
  void serve(std::shared_ptr<Connection> conn);
  void heartbeat_loop();
  /// batch is set when the reply carries one.
  Frame serve_batch(std::optional<TensorBatch>& batch);
  void on_served(uint64_t split);
  void flush_completions();
  void throttle();
  bool pipeline_idle() const;  // requires mu_

  WorkerConfig cfg_;
  std::unique_ptr<MasterLink> link_;
  SessionSpec spec_;
  std::unique_ptr<SplitProcessor> processor_;
  std::unique_ptr<Listener> listener_;
  BatchBuffer buffer_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Split> to_extract_;
  std::deque<std::pair<Split, InMemoryRowGroup>> to_transform_;
  std::deque<uint64_t> completions_;  // splits fully served, not yet reported
  std::map<uint64_t, uint64_t> pending_;  // split -> batches not yet served
  uint32_t in_flight_ = 0;                // splits between fetch and buffer
  bool master_done_ = false;
  bool draining_ = false;

  std::atomic<bool> killed_{false};
  std::atomic<bool> done_{false};
  std::atomic<uint64_t> served_{0};
  std::atomic<uint64_t> next_batch_id_{1};
  std::atomic<uint64_t> splits_completed_{0};
  std::atomic<size_t> max_buffered_{0};
  std::atomic<uint64_t> busy_nanos_{0};
  std::atomic<uint64_t> bytes_sent_{0};

  std::mutex throttle_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
  std::mutex stats_mu_;
  std::chrono::steady_clock::time_point last_report_;
  uint64_t last_busy_ = 0;
  uint64_t last_bytes_ = 0;

  std::vector<std::thread> threads_;
  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> handlers_;
};

}  // namespace dsi
