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

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "dsi/client.h"
#include "dsi/harness.h"
#include "dsi/master.h"
#include "dsi/worker.h"
#include "log.h"

extern char** environ;

namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct SessionOptions {
  std::string dataset;
  std::string partitions;
  std::string features;
  uint32_t zipf_k = 0;
  uint64_t seed = 1;
  std::string transforms;
  bool default_graph = false;
  uint32_t batch_size = 256;
  uint64_t split_size = 4096;

  void add(CLI::App* app) {
    app->add_option("--dataset", dataset, "directory holding manifest.json")->required();
    app->add_option("--partitions", partitions, "comma-separated partition keys (default: all)");
    app->add_option("--features", features, "comma-separated projection");
    app->add_option("--zipf-k", zipf_k, "sample a Zipf projection of this many features");
    app->add_option("--seed", seed, "seed for --zipf-k");
    app->add_option("--transforms", transforms, "transform manifest file");
    app->add_flag("--default-graph", default_graph, "derive a representative graph from the projection");
    app->add_option("--batch-size", batch_size);
    app->add_option("--split-size", split_size);
  }

  std::vector<std::string> args() const {
    std::vector<std::string> a{"--dataset", dataset, "--seed", std::to_string(seed), "--batch-size",
                               std::to_string(batch_size), "--split-size", std::to_string(split_size)};
    if (!partitions.empty()) a.insert(a.end(), {"--partitions", partitions});
    if (!features.empty()) a.insert(a.end(), {"--features", features});
    if (zipf_k) a.insert(a.end(), {"--zipf-k", std::to_string(zipf_k)});
    if (!transforms.empty()) a.insert(a.end(), {"--transforms", transforms});
    if (default_graph) a.push_back("--default-graph");
    return a;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

dsi::SessionSpec build_session(const SessionOptions& o, const dsi::TableMetadata& meta) {
  dsi::SessionSpec spec;
  spec.table = meta.table;
  spec.dataset_dir = fs::absolute(o.dataset).string();
  spec.partitions = split_list(o.partitions);
  if (spec.partitions.empty())
    for (const auto& part : meta.partitions) spec.partitions.push_back(part.key);
  spec.batch_size = o.batch_size;
  spec.split_size = o.split_size;
  if (o.zipf_k > 0) {
    auto rank = meta.popularity_rank.empty() ? dsi::popularity_rank(meta.schema, meta.seed) : meta.popularity_rank;
    std::mt19937_64 rng(o.seed);
    spec.projection = dsi::sample_projection(rank, 1.2, o.zipf_k, rng);
  } else if (!o.features.empty()) {
    std::vector<dsi::FeatureId> ids;
    for (const auto& t : split_list(o.features)) ids.push_back(static_cast<dsi::FeatureId>(std::stoul(t)));
    spec.projection = dsi::FeatureProjection(ids);
  } else {
    spec.projection = dsi::FeatureProjection::all(meta.schema);
  }
  if (!o.transforms.empty()) {
    std::ifstream in(o.transforms);
    if (!in) throw dsi::IoError("cannot read " + o.transforms);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    spec.graph = dsi::parse_manifest(text);
  } else if (o.default_graph) {
    spec.graph = dsi::default_graph(spec.projection, meta.schema);
  }
  auto report = dsi::validate_session(spec, meta.schema);
  if (!report.ok()) throw dsi::SchemaError("invalid session: " + report.to_string());
  return spec;
}

void write_port(const std::string& path, uint16_t port) {
  if (path.empty()) return;
  std::string tmp = path + ".tmp";
  std::ofstream(tmp) << port << "\n";
  fs::rename(tmp, path);
}

uint16_t wait_port(const std::string& path, pid_t child, std::chrono::seconds timeout = 60s) {
  auto end = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < end) {
    int status = 0;
    if (waitpid(child, &status, WNOHANG) == child) throw dsi::Error("process exited before binding: " + path);
    std::ifstream in(path);
    int port = 0;
    if (in >> port && port > 0) return static_cast<uint16_t>(port);
    std::this_thread::sleep_for(20ms);
  }
  throw dsi::IoError("timed out waiting for " + path);
}

pid_t spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  std::string self = fs::read_symlink("/proc/self/exe").string();
  argv.push_back(self.data());
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), environ) != 0)
    throw dsi::Error("cannot spawn " + self);
  return pid;
}

int wait_pid(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

int run_master(const SessionOptions& so, uint16_t port, const std::string& port_file, const std::string& ckpt_dir,
               bool restore, double lease_ttl, uint32_t heartbeat_ms, double linger) {
  auto meta = dsi::TableMetadata::load(so.dataset);
  auto spec = build_session(so, meta);
  auto splits = dsi::generate_splits(spec, meta);
  dsi::LeaseConfig lease{lease_ttl, heartbeat_ms / 1000.0, 3};
  std::optional<dsi::SessionState> state;
  if (restore) {
    if (auto c = dsi::load_latest_checkpoint(ckpt_dir)) {
      state.emplace(dsi::SessionState::restore(*c, spec, splits, lease));
      spdlog::info("restored checkpoint epoch {} ({} splits completed)", c->epoch, c->completed.size());
    }
  }
  if (!state) state.emplace(spec, splits, lease);
  dsi::MasterConfig cfg;
  cfg.listen.port = port;
  cfg.lease = lease;
  cfg.checkpoint_dir = ckpt_dir;
  dsi::Master master(std::move(*state), cfg);
  master.start();
  write_port(port_file, master.port());
  while (!master.finished()) std::this_thread::sleep_for(50ms);
  std::this_thread::sleep_for(std::chrono::duration<double>(linger));
  auto m = master.metrics();
  std::cout << "master splits=" << splits.size() << " issued=" << m.splits_issued << " reissued=" << m.splits_reissued
            << " duplicates=" << m.duplicate_completions << " workers=" << m.workers_registered << std::endl;
  master.stop();
  return 0;
}

int run_worker(dsi::WorkerConfig cfg, const std::string& port_file, double linger) {
  dsi::Worker w(cfg);
  w.start();
  write_port(port_file, w.port());
  w.wait();
  std::this_thread::sleep_for(std::chrono::duration<double>(linger));
  std::cout << "worker served=" << w.batches_served() << std::endl;
  w.stop();
  return 0;
}

struct TrainerOptions {
  std::string workers;
  uint32_t clients = 1, client_index = 0, fanout = 4;
  double rate = 1000.0, duration = 0.0;
  std::string master, row_ids;
};

int run_trainer_cmd(const TrainerOptions& o) {
  dsi::RoutingTable rt;
  for (const auto& s : split_list(o.workers)) rt.workers.push_back(dsi::Endpoint::parse(s));
  rt.clients = o.clients;
  rt.fanout = o.fanout;
  dsi::ClientConfig cc;
  cc.workers = rt.assignment(o.client_index);
  cc.client_id = o.client_index;
  if (!o.master.empty()) cc.master = dsi::Endpoint::parse(o.master);
  dsi::Client client(cc);
  std::ofstream ids;
  if (!o.row_ids.empty()) ids.open(o.row_ids);
  dsi::TrainerConfig tc;
  tc.rate = o.rate;
  tc.duration_seconds = o.duration;
  uint64_t n = 0;
  tc.on_batch = [&](const dsi::TensorBatch& b) {
    for (uint64_t r : b.row_ids) ids << r << '\n';
    if (++n % 16 == 0) client.report_client_stats();
  };
  auto report = dsi::run_trainer(client, tc);
  std::cout << report.to_line() << " max_connections=" << client.max_open_connections() << std::endl;
  return 0;
}

struct E2eResult {
  bool ok = false;
  std::string summary;
};

E2eResult run_e2e(const SessionOptions& so, uint32_t workers, uint32_t clients, double rate, const std::string& tmp) {
  fs::create_directories(tmp);
  for (const auto& e : fs::directory_iterator(tmp)) fs::remove_all(e.path());
  auto margs = so.args();
  margs.insert(margs.begin(), "master");
  margs.insert(margs.end(), {"--port-file", (fs::path(tmp) / "master.port").string(), "--heartbeat-ms", "200"});
  pid_t master = spawn(margs);
  uint16_t mport = wait_port((fs::path(tmp) / "master.port").string(), master);
  std::string mep = "127.0.0.1:" + std::to_string(mport);
  std::vector<pid_t> wpids;
  std::string eps;
  for (uint32_t i = 0; i < workers; ++i) {
    std::string pf = (fs::path(tmp) / ("worker" + std::to_string(i) + ".port")).string();
    wpids.push_back(spawn({"worker", "--master", mep, "--port-file", pf}));
    eps += (i ? "," : "") + std::string("127.0.0.1:") + std::to_string(wait_port(pf, wpids.back()));
  }
  std::vector<pid_t> tpids;
  for (uint32_t c = 0; c < clients; ++c)
    tpids.push_back(spawn({"trainer", "--workers", eps, "--clients", std::to_string(clients), "--client-index",
                           std::to_string(c), "--rate", std::to_string(rate), "--master", mep, "--row-ids",
                           (fs::path(tmp) / ("rows" + std::to_string(c) + ".txt")).string()}));
  int failures = 0;
  for (pid_t p : tpids) failures += wait_pid(p) != 0;
  for (pid_t p : wpids) failures += wait_pid(p) != 0;
  failures += wait_pid(master) != 0;

  auto meta = dsi::TableMetadata::load(so.dataset);
  auto spec = build_session(so, meta);
  uint64_t expected = 0;
  for (const auto& s : dsi::generate_splits(spec, meta)) expected += s.rows();
  std::map<uint64_t, uint32_t> seen;
  for (uint32_t c = 0; c < clients; ++c) {
    std::ifstream in(fs::path(tmp) / ("rows" + std::to_string(c) + ".txt"));
    uint64_t r;
    while (in >> r) ++seen[r];
  }
  uint64_t dup = 0;
  for (const auto& [r, n] : seen) dup += n - 1;
  E2eResult res;
  res.ok = failures == 0 && dup == 0 && seen.size() == expected;
  std::ostringstream os;
  os << "e2e workers=" << workers << " clients=" << clients << " rows_expected=" << expected
     << " rows_delivered=" << seen.size() << " duplicates=" << dup << " process_failures=" << failures
     << " exactly_once=" << (res.ok ? "true" : "false");
  res.summary = os.str();
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  dsi::tools::init_logging();
  CLI::App app{"Benchmarks and service processes for the DSI pipeline"};
  app.require_subcommand(1);

  // ladder
  auto* ladder = app.add_subcommand("ladder", "run the optimization ladder and write a report");
  std::string dataset_dir, report_path = "ladder.tsv", format = "tsv";
  uint32_t workers = 0, stripe_rows = 400, divisor = 40, clients = 1;
  uint64_t window = dsi::kDefaultCoalesceWindow, rows = 100000, seed = 7;
  double trainer_rate = 1000.0;
  ladder->add_option("--dataset", dataset_dir, "directory for the ladder tables")->required();
  ladder->add_option("--workers", workers, "also run an end-to-end session with this many workers");
  ladder->add_option("--trainer-rate", trainer_rate, "trainer demand in batches/s for the end-to-end run");
  ladder->add_option("--window-bytes", window, "coalescing window");
  ladder->add_option("--stripe-rows", stripe_rows, "rows per stripe before +LS");
  ladder->add_option("--report", report_path, "output file");
  ladder->add_option("--format", format)->check(CLI::IsMember({"tsv", "md"}));
  ladder->add_option("--rows", rows, "table rows");
  ladder->add_option("--feature-divisor", divisor, "scale down the rm1 feature counts");
  ladder->add_option("--seed", seed);

  // master
  auto* master = app.add_subcommand("master", "run the master for one session");
  SessionOptions so;
  so.add(master);
  uint16_t port = 0;
  std::string port_file, ckpt_dir;
  bool restore = false;
  double lease_ttl = 30.0, linger = 2.0;
  uint32_t heartbeat_ms = 1000;
  master->add_option("--port", port);
  master->add_option("--port-file", port_file, "write the bound port here");
  master->add_option("--checkpoint-dir", ckpt_dir);
  master->add_flag("--restore", restore, "resume from the latest checkpoint in --checkpoint-dir");
  master->add_option("--lease-ttl", lease_ttl);
  master->add_option("--heartbeat-ms", heartbeat_ms);
  master->add_option("--linger", linger, "seconds to keep serving after the session finishes");

  // worker
  auto* worker = app.add_subcommand("worker", "run one worker");
  dsi::WorkerConfig wc;
  std::string master_ep, config_file, wport_file;
  double wlinger = 3.0;
  worker->add_option("--master", master_ep, "host:port")->required();
  worker->add_option("--port", wc.listen.port);
  worker->add_option("--port-file", wport_file);
  worker->add_option("--config", config_file, "key=value worker config");
  worker->add_option("--buffer", wc.buffer_capacity);
  worker->add_option("--extract-tasks", wc.extract_tasks);
  worker->add_option("--transform-tasks", wc.transform_tasks);
  worker->add_option("--throttle", wc.max_batches_per_second, "max batches/s");
  worker->add_option("--window-bytes", wc.window_bytes);
  worker->add_option("--linger", wlinger);

  // trainer
  auto* trainer = app.add_subcommand("trainer", "run a simulated trainer against workers");
  TrainerOptions to;
  trainer->add_option("--workers", to.workers, "comma-separated host:port list")->required();
  trainer->add_option("--clients", to.clients);
  trainer->add_option("--client-index", to.client_index);
  trainer->add_option("--fanout", to.fanout);
  trainer->add_option("--rate", to.rate, "batches/s");
  trainer->add_option("--duration", to.duration, "seconds; 0 runs to the end of data");
  trainer->add_option("--master", to.master, "report stalls to this master");
  trainer->add_option("--row-ids", to.row_ids, "write delivered row ids here");

  // e2e
  auto* e2e = app.add_subcommand("e2e", "spawn master, workers and trainers and check delivery");
  SessionOptions eo;
  eo.add(e2e);
  std::string tmp = "e2e-run";
  e2e->add_option("--workers", workers)->required();
  e2e->add_option("--clients", clients);
  e2e->add_option("--trainer-rate", trainer_rate);
  e2e->add_option("--work-dir", tmp);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ladder) {
      dsi::LadderConfig cfg;
      cfg.profile = dsi::DatasetProfile::preset("rm1", divisor);
      cfg.profile.rows_per_partition = rows;
      cfg.seed = seed;
      cfg.stripe_rows = stripe_rows;
      cfg.window_bytes = window;
      cfg.dir = dataset_dir;
      auto report = dsi::run_ladder(cfg);
      dsi::emit_report(report, format, report_path);
      std::cout << report.to_md();
      if (workers > 0) {
        SessionOptions s;
        s.dataset = dataset_dir;
        s.zipf_k = static_cast<uint32_t>(cfg.profile.projection_fraction * cfg.profile.total_features());
        s.default_graph = true;
        auto r = run_e2e(s, workers, 1, trainer_rate, (fs::path(dataset_dir) / "e2e").string());
        std::cout << r.summary << "\n";
        if (!r.ok) return 1;
      }
    } else if (*master) {
      return run_master(so, port, port_file, ckpt_dir, restore, lease_ttl, heartbeat_ms, linger);
    } else if (*worker) {
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto listen = wc.listen;
        wc = dsi::WorkerConfig::parse(text);
        if (listen.port) wc.listen = listen;
      }
      wc.master = dsi::Endpoint::parse(master_ep);
      wc.check();
      return run_worker(wc, wport_file, wlinger);
    } else if (*trainer) {
      return run_trainer_cmd(to);
    } else if (*e2e) {
      auto r = run_e2e(eo, workers, clients, trainer_rate, tmp);
      std::cout << r.summary << "\n";
      return r.ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "dsibench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
