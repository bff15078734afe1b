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

#include "dsi/master.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

namespace dsi {

namespace fs = std::filesystem;

std::vector<Split> generate_splits(const SessionSpec& spec, const TableMetadata& table) {
  if (spec.split_size == 0) throw Error("split size must be positive");
  std::vector<const TablePartition*> parts;
  if (spec.partitions.empty()) {
    for (const auto& p : table.partitions) parts.push_back(&p);
  } else {
    for (const auto& key : spec.partitions) {
      const auto* p = table.partition(key);
      if (!p) throw SchemaError("missing partition " + key + " in table " + table.table);
      parts.push_back(p);
    }
  }
  std::vector<Split> out;
  for (const auto* p : parts) {
    for (const auto& f : p->files) {
      if (f.stripe_rows == 0 && f.rows > 0) throw FormatError("file " + f.path + " has no stripe size");
      std::string path = spec.dataset_dir.empty() ? f.path : (fs::path(spec.dataset_dir) / f.path).string();
      for (uint64_t start = 0; start < f.rows; start += spec.split_size) {
        uint64_t end = std::min(f.rows, start + spec.split_size);
        Split s;
        s.id = out.size();
        s.path = path;
        s.first_stripe = static_cast<uint32_t>(start / f.stripe_rows);
        s.last_stripe = static_cast<uint32_t>((end - 1) / f.stripe_rows);
        s.first_row = f.first_row + start;
        s.last_row = f.first_row + end;
        s.file_first_row = f.first_row;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

void ScalerConfig::check() const {
  if (!(period_seconds > 0)) throw Error("scaler period must be positive");
  if (buffer_floor < 1) throw Error("buffer floor must be >= 1");
  if (!(util_ceiling > 0 && util_ceiling <= 1)) throw Error("utilization ceiling must be in (0, 1]");
  if (max_step == 0) throw Error("max step must be positive");
}

int evaluate_scaling(const FleetStats& fleet, const ScalerConfig& cfg) {
  if (fleet.workers == 0) return static_cast<int>(cfg.max_step);
  const double n = fleet.workers;
  if (fleet.stall) return static_cast<int>(cfg.max_step);
  if (fleet.buffered < cfg.buffer_floor * n) return 1;
  if (fleet.workers > 1 && fleet.buffered > 4 * cfg.buffer_floor * n &&
      fleet.mean_utilization < 0.5 * cfg.util_ceiling)
    return -1;
  return 0;
}

std::vector<AutoscalePeriod> simulate_autoscaler(const AutoscaleSimConfig& cfg) {
  cfg.scaler.check();
  if (cfg.ticks_per_period == 0 || !(cfg.capacity > 0)) throw Error("bad autoscaler simulation config");
  std::vector<AutoscalePeriod> out;
  uint32_t n = std::max(1u, cfg.initial_workers);
  double pool = 0.0;
  const double produce = cfg.capacity / cfg.ticks_per_period;
  const double consume = cfg.demand / cfg.ticks_per_period;
  for (uint32_t p = 0; p < cfg.periods; ++p) {
    AutoscalePeriod rec;
    rec.workers = n;
    double made = 0.0;
    for (uint32_t t = 0; t < cfg.ticks_per_period; ++t) {
      double room = std::max(0.0, n * cfg.worker_buffer - pool);
      double prod = std::min(n * produce, room);
      pool += prod;
      made += prod;
      double eat = std::min(consume, pool);
      if (eat + 1e-9 < consume) rec.stall = true;
      pool -= eat;
    }
    rec.buffered = pool;
    rec.utilization = made / (n * cfg.capacity);
    rec.delta = evaluate_scaling({n, pool, rec.utilization, rec.stall}, cfg.scaler);
    n = static_cast<uint32_t>(std::max(1, static_cast<int>(n) + rec.delta));
    out.push_back(rec);
  }
  return out;
}

std::vector<uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.u16(kCheckpointVersion);
  w.u64(c.epoch);
  w.u64(c.generation);
  w.u64(c.spec_digest);
  w.str(c.spec_json);
  w.u64(c.cursor);
  w.u64(c.completed.size());
  for (uint64_t s : c.completed) w.u64(s);
  w.u64(fnv1a64(w.buf()));
  return encode_frame(Frame{MsgType::Checkpoint, w.take()});
}

Checkpoint decode_checkpoint(std::span<const uint8_t> bytes) {
  Frame f = decode_frame(bytes);
  expect_type(f, MsgType::Checkpoint);
  if (f.payload.size() < 8) throw FormatError("checkpoint too short");
  std::span<const uint8_t> body(f.payload.data(), f.payload.size() - 8);
  ByteReader tail(std::span<const uint8_t>(f.payload).subspan(body.size()));
  if (tail.u64() != fnv1a64(body)) throw ChecksumError("checkpoint checksum mismatch");
  ByteReader r(body);
  if (r.u16() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint c;
  c.epoch = r.u64();
  c.generation = r.u64();
  c.spec_digest = r.u64();
  c.spec_json = r.str();
  c.cursor = r.u64();
  uint64_t n = r.u64();
  if (n * 8 != r.remaining()) throw FormatError("checkpoint completed set has wrong size");
  c.completed.resize(n);
  for (auto& s : c.completed) s = r.u64();
  return c;
}

std::string save_checkpoint(const std::string& dir, const Checkpoint& c) {
  fs::create_directories(dir);
  auto bytes = encode_checkpoint(c);
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint-%012llu.ckpt", static_cast<unsigned long long>(c.epoch));
  fs::path final_path = fs::path(dir) / name;
  fs::path tmp = final_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, final_path);
  return final_path.string();
}

std::optional<Checkpoint> load_latest_checkpoint(const std::string& dir) {
  if (!fs::exists(dir)) return std::nullopt;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.rbegin(), files.rend());
  for (const auto& p : files) {
    std::ifstream in(p, std::ios::binary);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
      spdlog::warn("skipping unreadable checkpoint {}: {}", p.string(), e.what());
    }
  }
  return std::nullopt;
}

SessionState::SessionState(SessionSpec spec, std::vector<Split> splits, LeaseConfig lease)
    : spec_(std::move(spec)), splits_(std::move(splits)), lease_(lease), completed_(splits_.size(), false) {
  for (size_t i = 0; i < splits_.size(); ++i)
    if (splits_[i].id != i) throw Error("split ids must be dense and ordered");
}

uint64_t SessionState::register_worker(const std::string& endpoint, double now) {
  uint64_t id = (generation_ << 32) | next_worker_++;
  workers_[id] = WorkerInfo{endpoint, now, {}, false};
  ++metrics_.workers_registered;
  return id;
}

NextResult SessionState::next_split(uint64_t worker, double now) {
  auto w = workers_.find(worker);
  if (w == workers_.end()) return {NextKind::Unregistered, std::nullopt};
  if (w->second.draining) return {NextKind::EndOfData, std::nullopt};
  uint64_t id = splits_.size();
  while (!reissue_.empty()) {
    uint64_t s = reissue_.front();
    reissue_.pop_front();
    if (!completed_[s] && !outstanding_.count(s)) {
      id = s;
      ++metrics_.splits_reissued;
      break;
    }
  }
  if (id == splits_.size() && cursor_ < splits_.size()) id = cursor_++;
  if (id == splits_.size())
    return {outstanding_.empty() ? NextKind::EndOfData : NextKind::Wait, std::nullopt};
  outstanding_[id] = {worker, now + lease_.ttl_seconds};
  ++metrics_.splits_issued;
  return {NextKind::Assigned, splits_[id]};
}

bool SessionState::complete_split(uint64_t, uint64_t split) {
  if (split >= splits_.size()) throw Error("unknown split " + std::to_string(split));
  outstanding_.erase(split);
  if (completed_[split]) {
    ++metrics_.duplicate_completions;
    return true;
  }
  completed_[split] = true;
  ++completed_count_;
  ++metrics_.splits_completed;
  return false;
}

HeartbeatReply SessionState::heartbeat(uint64_t worker, const WorkerStats& stats, double now) {
  auto w = workers_.find(worker);
  if (w == workers_.end()) return HeartbeatReply::Reregister;
  w->second.last_heartbeat = now;
  w->second.stats = stats;
  for (auto& [split, lease] : outstanding_)
    if (lease.first == worker) lease.second = now + lease_.ttl_seconds;
  return w->second.draining ? HeartbeatReply::Drain : HeartbeatReply::Continue;
}

void SessionState::client_report(uint64_t client, const ClientStats& stats) {
  auto& last = client_stalls_[client];
  if (stats.stall_events > last) stalled_ = true;
  last = stats.stall_events;
}

void SessionState::reclaim(uint64_t split) {
  outstanding_.erase(split);
  if (!completed_[split]) reissue_.push_back(split);
}

std::vector<uint64_t> SessionState::reap(double now) {
  std::vector<uint64_t> dead;
  const double limit = lease_.missed_heartbeats * lease_.heartbeat_seconds;
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (now - it->second.last_heartbeat >= limit) {
      dead.push_back(it->first);
      it = workers_.erase(it);
      ++metrics_.workers_dead;
    } else {
      ++it;
    }
  }
  std::vector<uint64_t> lost;
  for (const auto& [split, lease] : outstanding_)
    if (lease.second <= now || !workers_.count(lease.first)) lost.push_back(split);
  for (uint64_t s : lost) reclaim(s);
  return dead;
}

std::vector<uint64_t> SessionState::drain(uint32_t n) {
  std::vector<uint64_t> picked;
  for (auto it = workers_.rbegin(); it != workers_.rend() && picked.size() < n; ++it) {
    if (it->second.draining) continue;
    if (live_workers() <= 1) break;
    it->second.draining = true;
    picked.push_back(it->first);
  }
  return picked;
}

size_t SessionState::live_workers() const {
  size_t n = 0;
  for (const auto& [id, w] : workers_)
    if (!w.draining) ++n;
  return n;
}

FleetStats SessionState::fleet(bool reset_stall) {
  FleetStats f;
  double util = 0.0;
  for (const auto& [id, w] : workers_) {
    if (w.draining) continue;
    ++f.workers;
    f.buffered += w.stats.buffered_batches;
    util += std::max(w.stats.cpu, w.stats.network);
  }
  f.mean_utilization = f.workers ? util / f.workers : 0.0;
  f.stall = stalled_;
  if (reset_stall) stalled_ = false;
  return f;
}

Checkpoint SessionState::checkpoint() {
  Checkpoint c;
  c.epoch = ++epoch_;
  c.generation = generation_;
  c.spec_digest = spec_.digest();
  c.spec_json = spec_.to_json();
  c.cursor = cursor_;
  for (uint64_t i = 0; i < completed_.size(); ++i)
    if (completed_[i]) c.completed.push_back(i);
  return c;
}

SessionState SessionState::restore(const Checkpoint& c, SessionSpec spec, std::vector<Split> splits,
                                   LeaseConfig lease) {
  if (c.spec_digest != spec.digest()) throw Error("checkpoint belongs to a different session");
  SessionState s(std::move(spec), std::move(splits), lease);
  if (c.cursor > s.splits_.size()) throw FormatError("checkpoint cursor beyond split count");
  s.cursor_ = c.cursor;
  s.epoch_ = c.epoch;
  // Workers of the previous master may still present their old ids.
  s.generation_ = c.generation + 1;
  for (uint64_t id : c.completed) {
    if (id >= s.cursor_) throw FormatError("checkpoint completes an unissued split");
    if (!s.completed_[id]) ++s.completed_count_;
    s.completed_[id] = true;
  }
  // Anything issued before the checkpoint but not completed may have been
  // lost with the old master; hand it out again first.
  for (uint64_t id = 0; id < s.cursor_; ++id)
    if (!s.completed_[id]) s.reissue_.push_back(id);
  return s;
}

Master::Master(SessionState state, MasterConfig cfg) : state_(std::move(state)), cfg_(std::move(cfg)) {
  cfg_.scaler.check();
  t0_ = std::chrono::steady_clock::now();
}

Master::~Master() { stop(); }

double Master::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
}

void Master::start() {
  listener_ = std::make_unique<Listener>(cfg_.listen);
  accept_thread_ = std::thread([this] { accept_loop(); });
  timer_thread_ = std::thread([this] { timer_loop(); });
  spdlog::info("master listening on {}", endpoint().str());
}

void Master::stop() {
  if (stopping_.exchange(true)) return;
  if (listener_) listener_->shutdown();
  {
    std::lock_guard lk(conns_mu_);
    for (auto& c : conns_) c->shutdown();
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  if (timer_thread_.joinable()) timer_thread_.join();
  std::vector<std::thread> hs;
  {
    std::lock_guard lk(conns_mu_);
    hs.swap(handlers_);
  }
  for (auto& t : hs) t.join();
}

uint16_t Master::port() const { return listener_ ? listener_->port() : 0; }

Endpoint Master::endpoint() const { return Endpoint{cfg_.listen.host, port()}; }

std::vector<uint64_t> Master::drain(uint32_t n) {
  std::lock_guard lk(mu_);
  return state_.drain(n);
}
std::string Master::checkpoint_now() {
  if (cfg_.checkpoint_dir.empty()) throw Error("no checkpoint directory configured");
  Checkpoint c;
  {
    std::lock_guard lk(mu_);
    c = state_.checkpoint();
  }
  return save_checkpoint(cfg_.checkpoint_dir, c);
}

bool Master::finished() const {
  std::lock_guard lk(mu_);
  return state_.finished();
}

MasterMetrics Master::metrics() const {
  std::lock_guard lk(mu_);
  return state_.metrics();
}

void Master::inspect(const std::function<void(const SessionState&)>& f) const {
  std::lock_guard lk(mu_);
  f(state_);
}

void Master::accept_loop() {
  while (!stopping_) {
    auto c = listener_->accept(std::chrono::milliseconds(50));
    if (!c) continue;
    auto conn = std::make_shared<Connection>(std::move(*c));
    std::lock_guard lk(conns_mu_);
    if (stopping_) break;
    conns_.push_back(conn);
    handlers_.emplace_back([this, conn] { serve(conn); });
  }
}

void Master::serve(std::shared_ptr<Connection> conn) {
  try {
    while (!stopping_) {
      auto req = conn->recv();
      if (!req) break;
      conn->send(handle(*req));
    }
  } catch (const std::exception& e) {
    if (!stopping_) spdlog::debug("master connection closed: {}", e.what());
  }
  conn->close();
}

Frame Master::handle(const Frame& req) {
  std::lock_guard lk(mu_);
  const double t = now();
  switch (req.type) {
    case MsgType::RegisterWorker: {
      auto m = decode_register_request(req);
      RegisterReply r;
      r.worker_id = state_.register_worker(m.endpoint, t);
      r.session_json = state_.spec().to_json();
      r.heartbeat_ms = static_cast<uint32_t>(cfg_.lease.heartbeat_seconds * 1000);
      spdlog::info("registered worker {} at {}", r.worker_id, m.endpoint);
      return encode(r);
    }
    case MsgType::NextSplit: {
      auto res = state_.next_split(decode_next_split(req), t);
      switch (res.kind) {
        case NextKind::Assigned: return encode_assign(AssignStatus::Assigned, &*res.split);
        case NextKind::Wait: return encode_assign(AssignStatus::Wait, nullptr);
        case NextKind::Unregistered: return encode_assign(AssignStatus::Unregistered, nullptr);
        case NextKind::EndOfData: return encode_end_of_data();
      }
      break;
    }
    case MsgType::CompleteSplit: {
      auto [w, s] = decode_complete(req);
      bool dup = state_.complete_split(w, s);
      if (dup) spdlog::info("split {} completed again by worker {}", s, w);
      return encode_complete_ack(dup);
    }
    case MsgType::Heartbeat: {
      auto m = decode_heartbeat(req);
      if (m.role == Role::Client) {
        state_.client_report(m.id, m.client);
        return encode_heartbeat_reply(Directive::Continue);
      }
      switch (state_.heartbeat(m.id, m.worker, t)) {
        case HeartbeatReply::Continue: return encode_heartbeat_reply(Directive::Continue);
        case HeartbeatReply::Reregister: return encode_heartbeat_reply(Directive::Reregister);
        case HeartbeatReply::Drain: return encode_drain();
      }
      break;
    }
    default:
      break;
  }
  throw FormatError("unexpected message type " + std::to_string(static_cast<int>(req.type)));
}

void Master::timer_loop() {
  double last_scale = now();
  double last_ckpt = now();
  while (!stopping_) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    const double t = now();
    int delta = 0;
    {
      std::lock_guard lk(mu_);
      for (uint64_t w : state_.reap(t)) {
        if (state_.finished())
          spdlog::info("worker {} stopped heartbeating", w);
        else
          spdlog::warn("worker {} missed heartbeats; leases reclaimed", w);
      }
      if (cfg_.autoscale && t - last_scale >= cfg_.scaler.period_seconds) {
        last_scale = t;
        if (!state_.finished()) {
          delta = evaluate_scaling(state_.fleet(true), cfg_.scaler);
          if (delta < 0)
            for (uint64_t w : state_.drain(static_cast<uint32_t>(-delta))) spdlog::info("draining worker {}", w);
        }
      }
    }
    if (delta > 0 && cfg_.launch) cfg_.launch(delta);
    if (!cfg_.checkpoint_dir.empty() && t - last_ckpt >= cfg_.checkpoint_seconds) {
      last_ckpt = t;
      try {
        checkpoint_now();
      } catch (const std::exception& e) {
        spdlog::error("checkpoint failed: {}", e.what());
      }
    }
  }
}

}  // namespace dsi
