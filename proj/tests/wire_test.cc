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

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "dsi/errors.h"
#include "dsi/wire.h"

using namespace dsi;

namespace {

Split sample_split() {
  Split s;
  s.id = 17;
  s.path = "/data/t/part-2026-01-01-0.mdsi";
  s.first_stripe = 3;
  s.last_stripe = 5;
  s.first_row = 1200;
  s.last_row = 2400;
  s.file_first_row = 1000;
  return s;
}

TensorBatch sample_batch(std::mt19937_64& rng, uint32_t rows) {
  TensorBatch b;
  b.batch_id = rng();
  b.split_id = rng() % 1000;
  b.rows = rows;
  for (uint32_t r = 0; r < rows; ++r) {
    b.labels.push_back(static_cast<float>(r % 2));
    b.row_ids.push_back(rng());
  }
  DenseTensor d{4, 3, {}};
  for (uint32_t i = 0; i < rows * 3; ++i) d.values.push_back(std::uniform_real_distribution<float>(-1, 1)(rng));
  b.dense.push_back(d);
  SparseTensor s{9, {}, {0}, {}}, sc{11, {}, {0}, {}};
  for (uint32_t r = 0; r < rows; ++r) {
    uint32_t n = rng() % 5;
    for (uint32_t i = 0; i < n; ++i) {
      s.values.push_back(static_cast<int64_t>(rng()));
      sc.values.push_back(static_cast<int64_t>(rng()));
      sc.scores.push_back(static_cast<float>(i) * 0.5f);
    }
    s.offsets.push_back(static_cast<int32_t>(s.values.size()));
    sc.offsets.push_back(static_cast<int32_t>(sc.values.size()));
  }
  b.sparse = {s, sc};
  return b;
}

Frame reframe(const Frame& f) { return decode_frame(encode_frame(f)); }

}  // namespace

TEST(Frame, LayoutAndRoundTrip) {
  Frame f{MsgType::GetBatch, {1, 2, 3}};
  auto bytes = encode_frame(f);
  EXPECT_EQ(bytes, (std::vector<uint8_t>{4, 0, 0, 0, 7, 1, 2, 3}));
  auto back = decode_frame(bytes);
  EXPECT_EQ(back.type, MsgType::GetBatch);
  EXPECT_EQ(back.payload, f.payload);
}

TEST(Frame, RejectsBadLengths) {
  EXPECT_THROW(decode_frame(std::vector<uint8_t>{0, 0, 0, 0}), FormatError);
  EXPECT_THROW(decode_frame(std::vector<uint8_t>{5, 0, 0, 0, 7, 1}), FormatError);
  EXPECT_THROW(decode_frame(std::vector<uint8_t>{1, 0, 0, 0, 7, 1}), FormatError);
  EXPECT_THROW(decode_frame(std::vector<uint8_t>{0xff, 0xff, 0xff, 0xff, 7}), FormatError);
  EXPECT_THROW(decode_frame(std::vector<uint8_t>{1, 0}), FormatError);
}

TEST(Endpoint, Parse) {
  EXPECT_EQ(Endpoint::parse("10.0.0.2:8080"), (Endpoint{"10.0.0.2", 8080}));
  EXPECT_EQ(Endpoint::parse("localhost:1").str(), "localhost:1");
  EXPECT_THROW(Endpoint::parse("nohost"), Error);
  EXPECT_THROW(Endpoint::parse("h:70000"), Error);
}

TEST(Messages, ControlPlaneRoundTrip) {
  auto reg = decode_register_request(reframe(encode(RegisterRequest{"127.0.0.1:4000"})));
  EXPECT_EQ(reg.endpoint, "127.0.0.1:4000");

  auto rep = decode_register_reply(reframe(encode(RegisterReply{42, "{\"table\":\"t\"}", 250})));
  EXPECT_EQ(rep.worker_id, 42u);
  EXPECT_EQ(rep.session_json, "{\"table\":\"t\"}");
  EXPECT_EQ(rep.heartbeat_ms, 250u);

  EXPECT_EQ(decode_next_split(reframe(encode_next_split(7))), 7u);

  auto split = sample_split();
  auto [st, got] = decode_assign(reframe(encode_assign(AssignStatus::Assigned, &split)));
  EXPECT_EQ(st, AssignStatus::Assigned);
  ASSERT_TRUE(got);
  EXPECT_EQ(*got, split);
  auto [wst, none] = decode_assign(reframe(encode_assign(AssignStatus::Wait, nullptr)));
  EXPECT_EQ(wst, AssignStatus::Wait);
  EXPECT_FALSE(none);
  EXPECT_EQ(decode_assign(encode_assign(AssignStatus::Unregistered, nullptr)).first, AssignStatus::Unregistered);
  EXPECT_THROW(encode_assign(AssignStatus::Assigned, nullptr), Error);

  EXPECT_EQ(decode_complete(reframe(encode_complete(3, 99))), (std::pair<uint64_t, uint64_t>{3, 99}));
  EXPECT_TRUE(decode_complete_ack(encode_complete_ack(true)));
  EXPECT_FALSE(decode_complete_ack(encode_complete_ack(false)));

  HeartbeatRequest hb;
  hb.role = Role::Client;
  hb.id = 5;
  hb.worker = {0.5, 0.25, 0.125, 3, 12};
  hb.client = {4, 1.5, 10.0};
  auto hb2 = decode_heartbeat(reframe(encode(hb)));
  EXPECT_EQ(hb2.role, Role::Client);
  EXPECT_EQ(hb2.id, 5u);
  EXPECT_EQ(hb2.client.stall_events, 4u);
  EXPECT_EQ(hb2.client.stall_seconds, 1.5);
  EXPECT_EQ(hb2.client.wall_seconds, 10.0);
  // Only the sender's role section is on the wire.
  EXPECT_EQ(hb2.worker.buffered_batches, 0u);
  hb.role = Role::Worker;
  auto hb3 = decode_heartbeat(reframe(encode(hb)));
  EXPECT_EQ(hb3.worker.cpu, 0.5);
  EXPECT_EQ(hb3.worker.memory, 0.25);
  EXPECT_EQ(hb3.worker.network, 0.125);
  EXPECT_EQ(hb3.worker.buffered_batches, 3u);
  EXPECT_EQ(hb3.worker.splits_completed, 12u);

  EXPECT_EQ(decode_heartbeat_reply(encode_heartbeat_reply(Directive::Reregister)), Directive::Reregister);
  EXPECT_EQ(encode_drain().type, MsgType::Drain);
  EXPECT_EQ(encode_end_of_data().type, MsgType::EndOfData);
  EXPECT_EQ(decode_get_batch(encode_get_batch(8)), 8u);
}

TEST(Messages, BatchRoundTrip) {
  std::mt19937_64 rng(1);
  for (uint32_t rows : {1u, 7u, 256u}) {
    auto b = sample_batch(rng, rows);
    ASSERT_TRUE(b.valid());
    auto back = decode_batch_reply(reframe(encode_batch_reply(&b)));
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, b);
  }
  EXPECT_FALSE(decode_batch_reply(encode_batch_reply(nullptr)));
}

TEST(Messages, DecodersRejectGarbage) {
  EXPECT_THROW(decode_next_split(encode_get_batch(1)), FormatError);
  auto f = encode_complete(1, 2);
  f.payload.push_back(0);
  EXPECT_THROW(decode_complete(f), FormatError);
  f = encode_complete(1, 2);
  f.payload.pop_back();
  EXPECT_THROW(decode_complete(f), FormatError);
  f = encode_heartbeat_reply(Directive::Continue);
  f.payload[0] = 9;
  EXPECT_THROW(decode_heartbeat_reply(f), FormatError);

  // A batch whose offsets disagree with its row count is refused.
  std::mt19937_64 rng(2);
  auto b = sample_batch(rng, 4);
  b.sparse[0].values.push_back(1);
  ByteWriter w;
  write_batch(w, b);
  ByteReader r(w.buf());
  EXPECT_THROW(read_batch(r), FormatError);

  // Random truncations of a valid batch never decode silently.
  b = sample_batch(rng, 4);
  auto good = encode_batch_reply(&b);
  for (size_t n = 0; n < good.payload.size(); n += 3) {
    Frame t{good.type, {good.payload.begin(), good.payload.begin() + n}};
    EXPECT_THROW(decode_batch_reply(t), Error) << n;
  }

  Split bad = sample_split();
  bad.last_row = bad.first_row - 1;
  ByteWriter sw;
  write_split(sw, bad);
  ByteReader sr(sw.buf());
  EXPECT_THROW(read_split(sr), FormatError);
}

TEST(Socket, FramesCrossLoopback) {
  Listener l(Endpoint{"127.0.0.1", 0});
  ASSERT_NE(l.port(), 0);
  std::mt19937_64 rng(3);
  auto b = sample_batch(rng, 100);
  std::thread server([&] {
    auto c = l.accept(std::chrono::seconds(5));
    ASSERT_TRUE(c);
    while (auto f = c->recv()) {
      if (f->type == MsgType::GetBatch) c->send(encode_batch_reply(&b));
      else c->send(encode_end_of_data());
    }
  });
  auto c = Connection::connect(Endpoint{"127.0.0.1", l.port()});
  auto got = decode_batch_reply(c.call(encode_get_batch(1)));
  ASSERT_TRUE(got);
  EXPECT_EQ(*got, b);
  EXPECT_EQ(c.call(encode_drain()).type, MsgType::EndOfData);
  c.close();
  server.join();
}

TEST(Socket, AcceptTimesOutAndShutdownUnblocks) {
  Listener l(Endpoint{"127.0.0.1", 0});
  EXPECT_FALSE(l.accept(std::chrono::milliseconds(20)));
  std::thread t([&] { std::this_thread::sleep_for(std::chrono::milliseconds(50)); l.shutdown(); });
  auto start = std::chrono::steady_clock::now();
  EXPECT_FALSE(l.accept(std::chrono::seconds(10)));
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
  t.join();
}

TEST(Socket, ConnectToClosedPortFails) {
  uint16_t port;
  {
    Listener l(Endpoint{"127.0.0.1", 0});
    port = l.port();
  }
  EXPECT_THROW(Connection::connect(Endpoint{"127.0.0.1", port}, std::chrono::milliseconds(500)), IoError);
}
