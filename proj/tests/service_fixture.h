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

// In-process clusters over small generated tables, and the single-process
// oracle their output is compared against.

#include <unistd.h>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "dsi/client.h"
#include "dsi/dataset.h"
#include "dsi/executor.h"
#include "dsi/harness.h"
#include "dsi/io_planner.h"
#include "dsi/master.h"
#include "dsi/worker.h"

namespace dsi::testing {

struct Fixture {
  std::filesystem::path dir;
  TableMetadata meta;
  SessionSpec spec;
  std::vector<Split> splits;
};

inline Fixture make_fixture(const std::string& name, uint64_t rows_per_partition, uint32_t partitions,
                            uint64_t split_size, uint32_t batch_size) {
  Fixture fx;
  fx.dir = std::filesystem::temp_directory_path() / ("dsi_svc_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(fx.dir);
  DatasetProfile p;
  p.dense_features = 6;
  p.sparse_features = 3;
  p.scored_features = 1;
  p.coverage = 0.6;
  p.mean_length = 4;
  p.rows_per_partition = rows_per_partition;
  p.partitions = partitions;
  p.files_per_partition = 2;
  GenOptions opt;
  opt.seed = 17;
  opt.writer.stripe_rows = 300;
  fx.meta = gen_dataset(p, opt, fx.dir.string());
  fx.spec.table = fx.meta.table;
  fx.spec.dataset_dir = fx.dir.string();
  for (const auto& part : fx.meta.partitions) fx.spec.partitions.push_back(part.key);
  fx.spec.projection = FeatureProjection::all(fx.meta.schema);
  fx.spec.graph = default_graph(fx.spec.projection, fx.meta.schema);
  fx.spec.batch_size = batch_size;
  fx.spec.split_size = split_size;
  fx.splits = generate_splits(fx.spec, fx.meta);
  return fx;
}

/// Row-major read with a per-stream plan, then the executor per split.
/// Keyed by the batch's row ids; batch_id is left 0.
inline std::map<std::vector<uint64_t>, TensorBatch> monolith_batches(const Fixture& fx) {
  std::map<std::vector<uint64_t>, TensorBatch> out;
  std::map<std::string, std::vector<Sample>> files;
  for (const auto& s : fx.splits) {
    auto& rows = files[s.path];
    if (rows.empty()) {
      auto r = TableReader::open(s.path);
      uint32_t last = static_cast<uint32_t>(r.stripes().size() - 1);
      rows = r.read_rows(0, last, fx.spec.projection, plan_per_stream(r.footer(), r.stripes(), 0, last, fx.spec.projection));
    }
    std::span<const Sample> slice(rows.data() + (s.first_row - s.file_first_row), s.rows());
    for (auto& b : execute_graph(fx.spec.graph, fx.spec.projection, fx.meta.schema, slice, fx.spec.batch_size,
                                 s.first_row)) {
      b.split_id = s.id;
      auto key = b.row_ids;
      out.emplace(std::move(key), std::move(b));
    }
  }
  return out;
}

/// A master and a fixed set of workers, all on loopback. Workers keep their
/// ports across restarts so clients can reconnect.
class Cluster {
 public:
  Cluster(const Fixture& fx, int workers, WorkerConfig wcfg = {}) : fx_(fx), wcfg_(wcfg) {
    mcfg_.listen = {"127.0.0.1", 0};
    mcfg_.lease = {3.0, 0.05, 4};
    // Checkpoints are only taken on demand.
    mcfg_.checkpoint_dir = (fx.dir / "ckpt").string();
    mcfg_.checkpoint_seconds = 1e9;
    master = std::make_unique<Master>(SessionState(fx.spec, fx.splits, mcfg_.lease), mcfg_);
    master->start();
    mcfg_.listen.port = master->port();
    wcfg_.master = master->endpoint();
    wcfg_.listen = {"127.0.0.1", 0};
    for (int i = 0; i < workers; ++i) {
      this->workers.push_back(std::make_unique<Worker>(wcfg_));
      this->workers.back()->start();
      ports.push_back(this->workers.back()->port());
    }
  }
  ~Cluster() { shutdown(); }

  RoutingTable routing(uint32_t clients, uint32_t fanout) const {
    RoutingTable rt;
    for (uint16_t p : ports) rt.workers.push_back({"127.0.0.1", p});
    rt.clients = clients;
    rt.fanout = fanout;
    return rt;
  }

  void kill(size_t i) {
    std::lock_guard lk(mu_);
    workers[i]->kill();
    workers[i].reset();
  }
  void restart(size_t i) {
    auto cfg = wcfg_;
    cfg.listen.port = ports[i];
    auto w = std::make_unique<Worker>(cfg);
    w->start();
    std::lock_guard lk(mu_);
    workers[i] = std::move(w);
  }
  /// Checkpoint, stop, and bring up a restored master on the same port.
  void restart_master() {
    std::lock_guard lk(mu_);
    master->checkpoint_now();
    master->stop();
    master.reset();
    auto loaded = load_latest_checkpoint(mcfg_.checkpoint_dir);
    master = std::make_unique<Master>(SessionState::restore(*loaded, fx_.spec, fx_.splits, mcfg_.lease), mcfg_);
    master->start();
  }
  uint64_t outstanding() {
    std::lock_guard lk(mu_);
    uint64_t n = 0;
    master->inspect([&](const SessionState& s) { n = s.outstanding().size(); });
    return n;
  }
  void drain(uint32_t n) { master->drain(n); }
  void shutdown() {
    std::lock_guard lk(mu_);
    for (auto& w : workers)
      if (w) w->kill();
    if (master) master->stop();
  }

  std::unique_ptr<Master> master;
  std::vector<std::unique_ptr<Worker>> workers;
  std::vector<uint16_t> ports;

 private:
  const Fixture& fx_;
  WorkerConfig wcfg_;
  MasterConfig mcfg_;
  std::mutex mu_;
};

inline std::vector<TensorBatch> drain_clients(std::vector<std::unique_ptr<Client>>& clients) {
  std::mutex mu;
  std::vector<TensorBatch> all;
  std::vector<std::thread> ts;
  for (auto& c : clients)
    ts.emplace_back([&, cl = c.get()] {
      while (auto b = cl->next_batch()) {
        std::lock_guard lk(mu);
        all.push_back(std::move(*b));
      }
    });
  for (auto& t : ts) t.join();
  return all;
}

/// One client per routing slot, each draining to EndOfData.
inline std::vector<TensorBatch> consume(const RoutingTable& rt) {
  std::vector<std::unique_ptr<Client>> clients;
  for (uint32_t c = 0; c < rt.clients; ++c) {
    ClientConfig cc;
    cc.workers = rt.assignment(c);
    cc.client_id = c;
    clients.push_back(std::make_unique<Client>(cc));
  }
  return drain_clients(clients);
}

}  // namespace dsi::testing
