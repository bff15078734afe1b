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

#include "dsi/worker.h"

#include <algorithm>
#include <sstream>

#include <spdlog/spdlog.h>

namespace dsi {

using Clock = std::chrono::steady_clock;

void WorkerConfig::check() const {
  if (buffer_capacity == 0) throw Error("buffer capacity must be >= 1");
  if (extract_tasks == 0 || transform_tasks == 0) throw Error("stage task counts must be >= 1");
  if (window_bytes == 0) throw Error("window bytes must be positive");
  if (max_batches_per_second < 0) throw Error("throttle must be non-negative");
}

WorkerConfig WorkerConfig::parse(const std::string& text) {
  WorkerConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw Error("worker config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "master") c.master = Endpoint::parse(val);
      else if (key == "listen") c.listen = Endpoint::parse(val);
      else if (key == "buffer_capacity") c.buffer_capacity = static_cast<uint32_t>(std::stoul(val));
      else if (key == "extract_tasks") c.extract_tasks = static_cast<uint32_t>(std::stoul(val));
      else if (key == "transform_tasks") c.transform_tasks = static_cast<uint32_t>(std::stoul(val));
      else if (key == "window_bytes") c.window_bytes = std::stoull(val);
      else if (key == "max_batches_per_second") c.max_batches_per_second = std::stod(val);
      else if (key == "master_retry_seconds") c.master_retry_seconds = std::stod(val);
      else throw Error("unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error("worker config line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  c.check();
  return c;
}

SplitProcessor::SplitProcessor(const SessionSpec& spec, uint64_t window_bytes) : spec_(spec), window_(window_bytes) {}

SplitProcessor::Opened SplitProcessor::open(const std::string& path) {
  std::lock_guard lk(mu_);
  auto it = files_.find(path);
  if (it != files_.end()) return it->second;
  auto reader = std::make_shared<const TableReader>(TableReader::open(path));
  auto graph = std::make_shared<const CompiledGraph>(compile_graph(spec_.graph, spec_.projection, reader->footer().schema));
  return files_[path] = Opened{reader, graph};
}

InMemoryRowGroup SplitProcessor::extract(const Split& split) {
  auto f = open(split.path);
  const auto& r = *f.reader;
  auto plan = plan_coalesced(r.footer(), r.stripes(), split.first_stripe, split.last_stripe, spec_.projection, window_);
  InMemoryRowGroup g = r.read_row_group(split.first_stripe, split.last_stripe, spec_.projection, plan);
  uint64_t base = split.file_first_row + g.first_row_id;  // table-global id of g's row 0
  if (split.first_row < base || split.last_row > base + g.rows) throw Error("split rows outside its stripes");
  g = g.slice(static_cast<uint32_t>(split.first_row - base), static_cast<uint32_t>(split.last_row - base));
  g.first_row_id = split.first_row;
  return g;
}

std::vector<TensorBatch> SplitProcessor::transform(const InMemoryRowGroup& rows, const Split& split,
                                                   ExecStats* stats) {
  auto f = open(split.path);
  GraphExecutor exec(*f.graph, spec_.batch_size);
  auto out = exec.run(rows);
  for (auto& b : out) b.split_id = split.id;
  if (stats) stats->merge(exec.stats());
  return out;
}

std::vector<TensorBatch> SplitProcessor::run(const Split& split, ExecStats* stats) {
  return transform(extract(split), split, stats);
}

bool BatchBuffer::push(TensorBatch b) {
  std::unique_lock lk(mu_);
  not_full_.wait(lk, [&] { return closed_ || q_.size() < capacity_; });
  if (closed_) return false;
  q_.push_back(std::move(b));
  return true;
}

std::optional<TensorBatch> BatchBuffer::try_pop() {
  std::lock_guard lk(mu_);
  if (q_.empty()) return std::nullopt;
  TensorBatch b = std::move(q_.front());
  q_.pop_front();
  not_full_.notify_one();
  return b;
}

void BatchBuffer::unget(TensorBatch b) {
  std::lock_guard lk(mu_);
  if (!closed_) q_.push_front(std::move(b));
}
size_t BatchBuffer::size() const {
  std::lock_guard lk(mu_);
  return q_.size();
}

void BatchBuffer::close() {
  std::lock_guard lk(mu_);
  closed_ = true;
  q_.clear();
  not_full_.notify_all();
}

// One registered identity with the master, shared by every thread of the
// worker. Reconnects and re-registers when the master goes away.
class Worker::MasterLink {
 public:
  MasterLink(const WorkerConfig& cfg, std::atomic<bool>& killed) : cfg_(cfg), killed_(killed) {}

  void set_endpoint(std::string ep) { endpoint_ = std::move(ep); }

  RegisterReply register_now() {
    std::lock_guard lk(mu_);
    return with_retry([&] { return do_register(); });
  }

  /// build() receives the current worker id.
  Frame call(const std::function<Frame(uint64_t)>& build) {
    std::lock_guard lk(mu_);
    return with_retry([&] {
      if (!conn_.valid()) do_register();
      return conn_.call(build(id_));
    });
  }

  void reregister() {
    std::lock_guard lk(mu_);
    with_retry([&] { return do_register(); });
  }

  void shutdown() { conn_.shutdown(); }

 private:
  RegisterReply do_register() {
    if (!conn_.valid()) conn_ = Connection::connect(cfg_.master);
    auto reply = decode_register_reply(conn_.call(encode(RegisterRequest{endpoint_})));
    if (id_ != 0 && id_ != reply.worker_id)
      spdlog::info("worker {} re-registered as {}", id_, reply.worker_id);
    id_ = reply.worker_id;
    return reply;
  }

  template <typename F>
  auto with_retry(F&& f) -> decltype(f()) {
    auto start = Clock::now();
    for (;;) {
      if (killed_) throw IoError("worker killed");
      try {
        return f();
      } catch (const IoError& e) {
        conn_.close();
        if (std::chrono::duration<double>(Clock::now() - start).count() > cfg_.master_retry_seconds)
          throw IoError(std::string("master unreachable: ") + e.what());
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    }
  }

  const WorkerConfig& cfg_;
  std::atomic<bool>& killed_;
  std::mutex mu_;
  Connection conn_;
  uint64_t id_ = 0;
  std::string endpoint_;
};

Worker::Worker(WorkerConfig cfg) : cfg_(std::move(cfg)), buffer_(cfg_.buffer_capacity) { cfg_.check(); }

Worker::~Worker() { kill(); }

uint16_t Worker::port() const { return listener_ ? listener_->port() : 0; }

Endpoint Worker::endpoint() const { return Endpoint{cfg_.listen.host, port()}; }

void Worker::start() {
  listener_ = std::make_unique<Listener>(cfg_.listen);
  link_ = std::make_unique<MasterLink>(cfg_, killed_);
  link_->set_endpoint(endpoint().str());
  auto reply = link_->register_now();
  spec_ = SessionSpec::from_json(reply.session_json);
  processor_ = std::make_unique<SplitProcessor>(spec_, cfg_.window_bytes);
  last_report_ = Clock::now();
  const auto hb = std::chrono::milliseconds(std::max<uint32_t>(10, reply.heartbeat_ms));
  threads_.emplace_back([this] { accept_loop(); });
  threads_.emplace_back([this, hb] {
    while (!killed_ && !done_) {
      heartbeat_loop();
      for (auto t = Clock::now(); !killed_ && !done_ && Clock::now() - t < hb;)
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  threads_.emplace_back([this] { fetch_loop(); });
  for (uint32_t i = 0; i < cfg_.extract_tasks; ++i) threads_.emplace_back([this] { extract_loop(); });
  for (uint32_t i = 0; i < cfg_.transform_tasks; ++i) threads_.emplace_back([this] { transform_loop(); });
  spdlog::info("worker serving on {}", endpoint().str());
}

void Worker::kill() {
  if (killed_.exchange(true)) return;
  buffer_.close();
  if (link_) link_->shutdown();
  {
    std::lock_guard lk(mu_);
    cv_.notify_all();
  }
  if (listener_) listener_->shutdown();
  {
    std::lock_guard lk(conns_mu_);
    for (auto& c : conns_) c->shutdown();
  }
  for (auto& t : threads_) t.join();
  threads_.clear();
  std::vector<std::thread> hs;
  {
    std::lock_guard lk(conns_mu_);
    hs.swap(handlers_);
  }
  for (auto& t : hs) t.join();
}

void Worker::stop() { kill(); }

void Worker::wait() {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return done_ || killed_; });
}

bool Worker::pipeline_idle() const { return in_flight_ == 0 && to_extract_.empty() && to_transform_.empty(); }

void Worker::fetch_loop() {
  const uint32_t max_in_flight = cfg_.extract_tasks + cfg_.transform_tasks + 1;
  try {
    while (!killed_) {
      flush_completions();
      {
        std::unique_lock lk(mu_);
        if (master_done_ || draining_) {
          master_done_ = true;
          if (pipeline_idle() && pending_.empty() && completions_.empty()) break;
          cv_.wait_for(lk, std::chrono::milliseconds(10));
          continue;
        }
        if (in_flight_ >= max_in_flight) {
          cv_.wait_for(lk, std::chrono::milliseconds(10));
          continue;
        }
      }
      Frame reply = link_->call([](uint64_t id) { return encode_next_split(id); });
      if (reply.type == MsgType::EndOfData) {
        std::lock_guard lk(mu_);
        master_done_ = true;
        cv_.notify_all();
        continue;
      }
      auto [status, split] = decode_assign(reply);
      if (status == AssignStatus::Unregistered) {
        link_->reregister();
      } else if (status == AssignStatus::Wait) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      } else {
        std::lock_guard lk(mu_);
        ++in_flight_;
        to_extract_.push_back(std::move(*split));
        cv_.notify_all();
      }
    }
  } catch (const std::exception& e) {
    if (!killed_) spdlog::error("worker lost the master: {}", e.what());
    killed_ = true;
  }
  // Everything served and reported; keep answering clients with EndOfData.
  if (!killed_) {
    std::lock_guard lk(mu_);
    done_ = true;
    cv_.notify_all();
  }
  if (killed_) {
    std::lock_guard lk(mu_);
    cv_.notify_all();
  }
}

void Worker::extract_loop() {
  for (;;) {
    Split split;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return killed_ || done_ || !to_extract_.empty(); });
      if (to_extract_.empty()) return;
      split = std::move(to_extract_.front());
      to_extract_.pop_front();
    }
    auto t0 = Clock::now();
    try {
      auto rows = processor_->extract(split);
      busy_nanos_ += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
      std::lock_guard lk(mu_);
      to_transform_.emplace_back(std::move(split), std::move(rows));
      cv_.notify_all();
    } catch (const std::exception& e) {
      // Abandon the split; its lease expires and the master re-issues it.
      spdlog::error("split {} abandoned: {}", split.id, e.what());
      std::lock_guard lk(mu_);
      --in_flight_;
      cv_.notify_all();
    }
  }
}

void Worker::throttle() {
  if (cfg_.max_batches_per_second <= 0) return;
  Clock::time_point slot;
  {
    std::lock_guard lk(throttle_mu_);
    auto now = Clock::now();
    auto step = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / cfg_.max_batches_per_second));
    next_slot_ = std::max(next_slot_ + step, now);
    slot = next_slot_;
  }
  while (!killed_ && Clock::now() < slot)
    std::this_thread::sleep_for(std::min<Clock::duration>(slot - Clock::now(), std::chrono::milliseconds(5)));
}

void Worker::transform_loop() {
  for (;;) {
    std::pair<Split, InMemoryRowGroup> work;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return killed_ || done_ || !to_transform_.empty(); });
      if (killed_ || to_transform_.empty()) return;
      work = std::move(to_transform_.front());
      to_transform_.pop_front();
    }
    const Split& split = work.first;
    auto t0 = Clock::now();
    std::vector<TensorBatch> batches;
    try {
      batches = processor_->transform(work.second, split);
    } catch (const std::exception& e) {
      spdlog::error("split {} abandoned: {}", split.id, e.what());
      std::lock_guard lk(mu_);
      --in_flight_;
      cv_.notify_all();
      continue;
    }
    busy_nanos_ += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
    {
      std::lock_guard lk(mu_);
      if (batches.empty()) completions_.push_back(split.id);
      else pending_[split.id] += batches.size();
    }
    for (auto& b : batches) {
      throttle();
      b.batch_id = next_batch_id_++;
      if (!buffer_.push(std::move(b))) return;
      size_t n = buffer_.size();
      size_t m = max_buffered_;
      while (n > m && !max_buffered_.compare_exchange_weak(m, n)) {
      }
    }
    std::lock_guard lk(mu_);
    --in_flight_;
    cv_.notify_all();
  }
}

void Worker::on_served(uint64_t split) {
  ++served_;
  std::lock_guard lk(mu_);
  auto it = pending_.find(split);
  if (it == pending_.end()) return;
  if (--it->second == 0) {
    pending_.erase(it);
    completions_.push_back(split);
    cv_.notify_all();
  }
}

void Worker::flush_completions() {
  for (;;) {
    uint64_t split;
    {
      std::lock_guard lk(mu_);
      if (completions_.empty()) return;
      split = completions_.front();
    }
    Frame ack = link_->call([split](uint64_t id) { return encode_complete(id, split); });
    decode_complete_ack(ack);
    ++splits_completed_;
    std::lock_guard lk(mu_);
    completions_.pop_front();
  }
}

Frame Worker::serve_batch(std::optional<TensorBatch>& batch) {
  if ((batch = buffer_.try_pop())) return encode_batch_reply(&*batch);
  std::lock_guard lk(mu_);
  if (master_done_ && pipeline_idle() && buffer_.size() == 0) return encode_end_of_data();
  return encode_batch_reply(nullptr);
}

void Worker::accept_loop() {
  while (!killed_) {
    auto c = listener_->accept(std::chrono::milliseconds(50));
    if (!c) continue;
    auto conn = std::make_shared<Connection>(std::move(*c));
    std::lock_guard lk(conns_mu_);
    if (killed_) break;
    conns_.push_back(conn);
    handlers_.emplace_back([this, conn] { serve(conn); });
  }
}

void Worker::serve(std::shared_ptr<Connection> conn) {
  try {
    while (!killed_) {
      auto req = conn->recv();
      if (!req) break;
      decode_get_batch(*req);
      if (killed_) break;
      std::optional<TensorBatch> batch;
      Frame f = serve_batch(batch);
      try {
        conn->send(f);
      } catch (const IoError&) {
        // Undelivered batches go back to the head of the queue.
        if (batch) buffer_.unget(std::move(*batch));
        throw;
      }
      // Only a batch that reached the socket counts toward completing its split.
      if (batch) {
        bytes_sent_ += f.payload.size();
        on_served(batch->split_id);
      }
    }
  } catch (const std::exception& e) {
    if (!killed_) spdlog::debug("client connection closed: {}", e.what());
  }
  conn->close();
}

WorkerStats Worker::report_stats() {
  WorkerStats s;
  s.buffered_batches = static_cast<uint32_t>(buffer_.size());
  s.splits_completed = splits_completed_;
  s.memory = static_cast<double>(s.buffered_batches) / buffer_.capacity();
  std::lock_guard lk(stats_mu_);
  auto now = Clock::now();
  double dt = std::chrono::duration<double>(now - last_report_).count();
  uint64_t busy = busy_nanos_, bytes = bytes_sent_;
  if (dt > 0) {
    double threads = cfg_.extract_tasks + cfg_.transform_tasks;
    s.cpu = std::min(1.0, (busy - last_busy_) * 1e-9 / dt / threads);
    s.network = std::min(1.0, (bytes - last_bytes_) / dt / 1.25e9);
  }
  last_report_ = now;
  last_busy_ = busy;
  last_bytes_ = bytes;
  return s;
}

void Worker::heartbeat_loop() {
  try {
    HeartbeatRequest hb;
    hb.role = Role::Worker;
    hb.worker = report_stats();
    Frame reply = link_->call([&](uint64_t id) {
      hb.id = id;
      return encode(hb);
    });
    if (reply.type == MsgType::Drain) {
      std::lock_guard lk(mu_);
      if (!draining_) spdlog::info("worker {} draining", endpoint().str());
      draining_ = true;
      cv_.notify_all();
      return;
    }
    if (decode_heartbeat_reply(reply) == Directive::Reregister) link_->reregister();
  } catch (const std::exception& e) {
    if (!killed_) spdlog::warn("heartbeat failed: {}", e.what());
  }
}

}  // namespace dsi
