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

#include "dsi/client.h"

#include <condition_variable>
#include <deque>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

namespace dsi {

using Clock = std::chrono::steady_clock;

std::vector<Endpoint> RoutingTable::assignment(uint32_t client) const {
  if (clients == 0) throw Error("routing needs at least one client");
  if (client >= clients) throw Error("client index out of range");
  std::vector<Endpoint> out;
  const uint32_t n = static_cast<uint32_t>(workers.size());
  for (uint32_t j = 0; j < k(); ++j) out.push_back(workers[(static_cast<uint64_t>(client) * k() + j) % n]);
  return out;
}

struct Client::Slot {
  Endpoint ep;
  std::mutex mu;
  Connection conn;
  bool ended = false;
  uint64_t served = 0;
  std::optional<Clock::time_point> down_since;
  Clock::time_point next_attempt{};
};

Client::Client(ClientConfig cfg) : cfg_(std::move(cfg)), created_(Clock::now()) {
  if (cfg_.workers.empty()) throw Error("client has no workers");
  for (const auto& ep : cfg_.workers) {
    auto s = std::make_unique<Slot>();
    s->ep = ep;
    slots_.push_back(std::move(s));
  }
}

Client::~Client() = default;

Client::Outcome Client::poll(Slot& s, std::optional<TensorBatch>& out) {
  std::unique_lock lk(s.mu, std::try_to_lock);
  if (!lk.owns_lock()) return Outcome::Busy;
  if (s.ended) return Outcome::Ended;
  auto now = Clock::now();
  auto mark_down = [&] {
    if (s.conn.valid()) {
      s.conn.close();
      --open_;
    }
    if (!s.down_since) s.down_since = now;
    s.next_attempt = now + std::chrono::milliseconds(20);
    if (now - *s.down_since > cfg_.give_up) {
      spdlog::warn("giving up on worker {}", s.ep.str());
      s.ended = true;
      return Outcome::Ended;
    }
    return Outcome::Down;
  };
  if (!s.conn.valid()) {
    if (now < s.next_attempt) return Outcome::Down;
    try {
      s.conn = Connection::connect(s.ep, std::chrono::milliseconds(500));
    } catch (const IoError&) {
      return mark_down();
    }
    uint32_t n = ++open_;
    uint32_t m = max_open_;
    while (n > m && !max_open_.compare_exchange_weak(m, n)) {
    }
  }
  Frame reply;
  try {
    reply = s.conn.call(encode_get_batch(cfg_.client_id));
  } catch (const IoError&) {
    return mark_down();
  }
  s.down_since.reset();
  if (reply.type == MsgType::EndOfData) {
    s.ended = true;
    s.conn.close();
    --open_;
    return Outcome::Ended;
  }
  out = decode_batch_reply(reply);
  if (!out) return Outcome::Pending;
  ++s.served;
  return Outcome::Batch;
}

std::optional<TensorBatch> Client::next_batch() {
  const size_t n = slots_.size();
  auto start = Clock::now();
  bool stalled = false;
  for (;;) {
    if (cancelled_) return std::nullopt;
    for (size_t i = 0; i < n; ++i) {
      auto& s = *slots_[cursor_++ % n];
      std::optional<TensorBatch> b;
      if (poll(s, b) == Outcome::Batch) {
        if (stalled) {
          std::lock_guard lk(stats_mu_);
          stats_.stall_seconds += std::chrono::duration<double>(Clock::now() - start).count();
        }
        return b;
      }
    }
    bool all_ended = true;
    for (auto& s : slots_) {
      std::lock_guard lk(s->mu);
      all_ended = all_ended && s->ended;
    }
    if (all_ended) return std::nullopt;
    if (!stalled && Clock::now() - start > cfg_.stall_timeout) {
      stalled = true;
      std::lock_guard lk(stats_mu_);
      ++stats_.stall_events;
    }
    std::this_thread::sleep_for(std::chrono::microseconds(500));
  }
}

ClientStats Client::stats() const {
  std::lock_guard lk(stats_mu_);
  ClientStats s = stats_;
  s.wall_seconds = std::chrono::duration<double>(Clock::now() - created_).count();
  return s;
}

void Client::report_client_stats() {
  if (!cfg_.master) return;
  std::lock_guard lk(master_mu_);
  HeartbeatRequest hb;
  hb.role = Role::Client;
  hb.id = cfg_.client_id;
  hb.client = stats();
  try {
    if (!master_.valid()) master_ = Connection::connect(*cfg_.master, std::chrono::milliseconds(500));
    decode_heartbeat_reply(master_.call(encode(hb)));
  } catch (const Error& e) {
    master_.close();
    spdlog::debug("client stats not delivered: {}", e.what());
  }
}

std::vector<uint64_t> Client::served_per_worker() const {
  std::vector<uint64_t> out;
  for (const auto& s : slots_) {
    std::lock_guard lk(s->mu);
    out.push_back(s->served);
  }
  return out;
}

std::string StallReport::to_line() const {
  std::ostringstream os;
  os << "stall_report wall_s=" << wall_seconds << " busy_s=" << busy_seconds << " stall_s=" << stall_seconds
     << " stall_fraction=" << stall_fraction() << " batches=" << batches;
  return os.str();
}

std::string StallReport::to_table() const {
  std::ostringstream os;
  os << "wall (s)        " << wall_seconds << "\n"
     << "busy (s)        " << busy_seconds << "\n"
     << "stall (s)       " << stall_seconds << "\n"
     << "stall fraction  " << stall_fraction() << "\n"
     << "batches         " << batches << "\n";
  return os.str();
}

StallReport run_trainer(Client& client, const TrainerConfig& cfg) {
  if (!(cfg.rate > 0)) throw Error("trainer rate must be positive");
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::optional<TensorBatch>> ready;
  bool stop = false;
  const size_t depth = std::max<uint32_t>(1, cfg.prefetch);

  std::thread prefetch([&] {
    for (;;) {
      std::optional<TensorBatch> b;
      try {
        b = client.next_batch();
      } catch (const std::exception& e) {
        spdlog::error("trainer fetch failed: {}", e.what());
      }
      std::unique_lock lk(mu);
      cv.wait(lk, [&] { return stop || ready.size() < depth; });
      if (stop) return;
      bool end = !b;
      ready.push_back(std::move(b));
      cv.notify_all();
      if (end) return;
    }
  });

  const auto step = std::chrono::duration<double>(1.0 / cfg.rate);
  StallReport r;
  uint64_t seen = 0;
  Clock::time_point t0 = Clock::now();
  auto past_deadline = [&](Clock::time_point t) {
    return cfg.duration_seconds > 0 && seen >= cfg.warmup_batches &&
           std::chrono::duration<double>(t - t0).count() >= cfg.duration_seconds;
  };
  for (;;) {
    auto wait_start = Clock::now();
    std::optional<TensorBatch> b;
    bool timed_out = false;
    {
      std::unique_lock lk(mu);
      while (ready.empty() && !timed_out) {
        if (cfg.duration_seconds > 0 && seen >= cfg.warmup_batches) {
          auto deadline = t0 + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(cfg.duration_seconds));
          timed_out = !cv.wait_until(lk, deadline, [&] { return !ready.empty(); });
        } else {
          cv.wait(lk);
        }
      }
      if (!timed_out) {
        b = std::move(ready.front());
        ready.pop_front();
        cv.notify_all();
      }
    }
    auto got = Clock::now();
    if (timed_out) {
      r.stall_seconds += std::chrono::duration<double>(got - wait_start).count();
      break;
    }
    if (!b) {
      r.end_of_data = true;
      break;
    }
    if (++seen <= cfg.warmup_batches) {
      t0 = got;
      if (cfg.on_batch) cfg.on_batch(*b);
      continue;
    }
    r.stall_seconds += std::chrono::duration<double>(got - wait_start).count();
    if (cfg.on_batch) cfg.on_batch(*b);
    std::this_thread::sleep_until(got + std::chrono::duration_cast<Clock::duration>(step));
    r.busy_seconds += std::chrono::duration<double>(Clock::now() - got).count();
    ++r.batches;
    if (past_deadline(Clock::now())) break;
  }
  r.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  {
    std::lock_guard lk(mu);
    stop = true;
    cv.notify_all();
  }
  client.set_cancelled(true);
  prefetch.join();
  client.set_cancelled(false);
  return r;
}

}  // namespace dsi
