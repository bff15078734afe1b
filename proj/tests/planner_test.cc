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

#include <algorithm>
#include <random>

#include "dsi/dataset.h"
#include "dsi/io_planner.h"
#include "layouts.h"
#include "oracles.h"

using namespace dsi;
using namespace layouts;

namespace {

void check_invariants(const ReadPlan& plan, const std::vector<StreamDescriptor>& wanted, uint64_t window) {
  uint64_t biggest = 0, requested = 0;
  for (const auto& d : wanted) {
    biggest = std::max(biggest, d.length);
    requested += d.length;
  }
  EXPECT_EQ(plan.requested_bytes, requested);
  EXPECT_GE(plan.fetched_bytes, plan.requested_bytes);
  uint64_t fetched = 0;
  for (size_t i = 0; i < plan.ios.size(); ++i) {
    const auto& io = plan.ios[i];
    fetched += io.length;
    if (i) EXPECT_LE(plan.ios[i - 1].end(), io.offset) << "ios overlap or are unsorted";
    EXPECT_LE(io.length, std::max(window, biggest)) << "window violated";
  }
  EXPECT_EQ(plan.fetched_bytes, fetched);
  for (const auto& d : wanted) {
    int covering = 0;
    for (const auto& io : plan.ios) covering += d.offset >= io.offset && d.end() <= io.end();
    EXPECT_EQ(covering, 1) << "stream at " << d.offset;
  }
  EXPECT_EQ(plan.stream_count(), wanted.size());
}

}  // namespace

TEST(Planner, PerStreamOneIoPerStream) {
  std::mt19937_64 rng(31);
  auto l = random_layout(rng, 50, 3);
  auto proj = random_projection(rng, 50, 0.2);
  auto plan = plan_per_stream(l.footer, l.stripes, 0, 2, proj);
  std::vector<StreamDescriptor> wanted;
  for (const auto& st : l.stripes) {
    auto ps = projected_streams(l.footer, st, proj);
    wanted.insert(wanted.end(), ps.begin(), ps.end());
  }
  EXPECT_EQ(plan.ios.size(), wanted.size());
  EXPECT_EQ(plan.over_read(), 0u);
  check_invariants(plan, wanted, 1);
}

TEST(Planner, FullProjectionIoCountIsDescriptorCount) {
  std::mt19937_64 rng(32);
  auto l = random_layout(rng, 30);
  auto plan = plan_per_stream(l.footer, l.stripes, 0, 0, FeatureProjection::all(l.footer.schema));
  EXPECT_EQ(plan.ios.size(), l.stripes[0].streams.size());
}

TEST(Planner, SingleDenseFeatureIsTwoIos) {
  FileFooter f;
  f.schema = TableSchema("t", "", {{1, FeatureKind::Dense, 1, 0}, {2, FeatureKind::Dense, 1, 0}});
  StripeFooter st;
  st.streams = {{kLabelFeature, StreamKind::Labels, 6, 10, 10},
                {1, StreamKind::Presence, 16, 2, 2},
                {1, StreamKind::Values, 18, 80, 80},
                {2, StreamKind::Presence, 98, 2, 2},
                {2, StreamKind::Values, 100, 80, 80}};
  f.stripes = {{6, 174, 180, 0, 10, 0}};
  auto plan = plan_per_stream(f, {st}, 0, 0, FeatureProjection({2}));
  int feature_ios = 0;
  for (const auto& io : plan.ios) feature_ios += io.streams[0].feature == 2;
  EXPECT_EQ(feature_ios, 2);
}

TEST(Planner, CoalescingOverReadsTheGap) {
  // Layout A, B, C, D; read A and D.
  FileFooter f;
  std::vector<FeatureSpec> specs;
  for (FeatureId id = 1; id <= 4; ++id) specs.push_back({id, FeatureKind::Dense, 1, 0});
  f.schema = TableSchema("t", "", specs);
  StripeFooter st;
  uint64_t off = 6;
  std::vector<uint64_t> sizes{100, 300, 500, 200};
  for (FeatureId id = 1; id <= 4; ++id) {
    st.streams.push_back({id, StreamKind::Values, off, sizes[id - 1], sizes[id - 1]});
    off += sizes[id - 1];
  }
  auto plan = plan_coalesced(f, {st}, 0, 0, FeatureProjection({1, 4}), 1 << 20);
  ASSERT_EQ(plan.ios.size(), 1u);
  EXPECT_EQ(plan.ios[0].offset, 6u);
  EXPECT_EQ(plan.ios[0].length, 1100u);
  EXPECT_EQ(plan.over_read(), 300u + 500u);
  // A window smaller than A..D splits the read.
  auto split = plan_coalesced(f, {st}, 0, 0, FeatureProjection({1, 4}), 1000);
  EXPECT_EQ(split.ios.size(), 2u);
  EXPECT_EQ(split.over_read(), 0u);
}

TEST(Planner, CoalescedMatchesMergeOracleOnRandomLayouts) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    auto l = random_layout(rng, trial < 100 ? 1000 : 50 + rng() % 200);
    const uint32_t n = static_cast<uint32_t>(l.footer.schema.features().size());
    auto proj = random_projection(rng, n, 0.1);
    uint64_t window = std::vector<uint64_t>{1, 4096, 65536, 1310720}[rng() % 4];
    auto plan = plan_coalesced(l.footer, l.stripes, 0, 0, proj, window);
    auto wanted = projected_streams(l.footer, l.stripes[0], proj);
    auto want = oracle::merge_oracle(wanted, window);
    ASSERT_EQ(plan.ios.size(), want.size()) << "trial " << trial;
    for (size_t i = 0; i < want.size(); ++i) {
      EXPECT_EQ(plan.ios[i].offset, want[i].begin);
      EXPECT_EQ(plan.ios[i].end(), want[i].end);
      EXPECT_EQ(plan.ios[i].streams.size(), want[i].streams);
    }
    check_invariants(plan, wanted, window);
    // Over-read is exactly the unselected bytes inside merged ranges.
    uint64_t unselected = 0;
    for (const auto& d : l.stripes[0].streams) {
      bool selected = d.feature == kLabelFeature || proj.contains(d.feature);
      if (selected) continue;
      for (const auto& io : plan.ios)
        if (d.offset >= io.offset && d.end() <= io.end()) unselected += d.length;
    }
    EXPECT_EQ(plan.over_read(), unselected);
    auto per = plan_per_stream(l.footer, l.stripes, 0, 0, proj);
    EXPECT_LE(plan.ios.size(), per.ios.size());
    // Dominance: merging trades one seek for at most `window` gap bytes,
    // so it holds whenever the window reads faster than a seek.
    for (double seek : {1e-4, 8e-3, 2e-2}) {
      StorageModel m;
      m.seek_seconds = seek;
      if (static_cast<double>(window) > seek * m.bandwidth_bytes_per_second) continue;
      double tc = simulate_throughput(plan, m).seconds, tp = simulate_throughput(per, m).seconds;
      EXPECT_LE(tc, tp * (1 + 1e-12));
      if (plan.ios.size() < per.ios.size()) EXPECT_LT(tc, tp);
    }
  }
}

TEST(Planner, CoalescedNeverMergesAcrossStripes) {
  std::mt19937_64 rng(34);
  auto l = random_layout(rng, 20, 4);
  auto plan = plan_coalesced(l.footer, l.stripes, 0, 3, FeatureProjection::all(l.footer.schema), UINT64_MAX);
  EXPECT_EQ(plan.ios.size(), 4u);
  EXPECT_EQ(plan.over_read(), 0u);
}

TEST(Planner, InvalidArguments) {
  std::mt19937_64 rng(35);
  auto l = random_layout(rng, 5, 2);
  auto p = FeatureProjection({1});
  EXPECT_THROW(plan_coalesced(l.footer, l.stripes, 0, 1, p, 0), Error);
  EXPECT_THROW(plan_per_stream(l.footer, l.stripes, 1, 0, p), Error);
  EXPECT_THROW(plan_per_stream(l.footer, l.stripes, 0, 2, p), Error);
  EXPECT_THROW(plan_per_stream(l.footer, l.stripes, 0, 1, FeatureProjection({77})), SchemaError);
  EXPECT_THROW(simulate_throughput(ReadPlan{}, StorageModel{}), Error);
  StorageModel bad;
  bad.seek_seconds = 0;
  ReadPlan one;
  one.ios.push_back({0, 10, {}});
  EXPECT_THROW(simulate_throughput(one, bad), Error);
}

TEST(Simulate, OneLargeIo) {
  ReadPlan plan;
  plan.ios.push_back({0, 180000000, {}});
  plan.requested_bytes = plan.fetched_bytes = 180000000;
  StorageModel unsplit;
  unsplit.max_io_bytes = 180000000;
  EXPECT_NEAR(simulate_throughput(plan, unsplit).seconds, 1.008, 1e-12);
  // With the default 8 MiB cap the same I/O is issued as 22 pieces.
  auto split = simulate_throughput(plan, StorageModel{});
  EXPECT_EQ(split.physical_ios, 22u);
  EXPECT_NEAR(split.seconds, 22 * 0.008 + 1.0, 1e-12);
}

TEST(Simulate, FewerIosIsFaster) {
  std::mt19937_64 rng(36);
  for (int t = 0; t < 100; ++t) {
    uint64_t total = 2 * (1000 + rng() % 1000000);
    ReadPlan a, b;
    a.ios = {{0, total / 4, {}}, {total, total / 4, {}}, {2 * total, total / 4, {}}, {3 * total, total / 4, {}}};
    b.ios = {{0, total / 2, {}}, {total, total / 2, {}}};
    a.requested_bytes = b.requested_bytes = a.fetched_bytes = b.fetched_bytes = total;
    EXPECT_LT(simulate_throughput(b, {}).seconds, simulate_throughput(a, {}).seconds);
  }
}

TEST(Planner, CalibratedPerStreamVersusChunkBaseline) {
  auto profile = DatasetProfile::preset("rm1", 40);
  auto schema = profile.schema("2026-01-01");
  SampleGenerator gen(schema, 3);
  std::vector<Sample> rows;
  for (int i = 0; i < 1600; ++i) rows.push_back(gen.next());
  WriterConfig cfg;
  cfg.stripe_rows = 400;
  cfg.order = OrderPolicy::Random;
  MemorySink sink;
  write_table(rows, schema, cfg, sink);
  TableReader reader(std::make_shared<MemorySource>(sink.take()));
  auto rank = popularity_rank(schema, 3);
  std::mt19937_64 rng(3);
  auto proj = sample_projection(rank, profile.zipf_exponent,
                                static_cast<size_t>(profile.projection_fraction * schema.features().size()), rng);
  const uint32_t last = static_cast<uint32_t>(reader.stripes().size() - 1);
  auto per = plan_per_stream(reader.footer(), reader.stripes(), 0, last, proj);
  auto chunk = plan_chunked(reader.footer(), reader.stripes(), 0, last, proj, 8ull << 20);
  std::vector<uint64_t> sizes;
  for (const auto& io : per.ios) sizes.push_back(io.length);
  std::nth_element(sizes.begin(), sizes.begin() + sizes.size() / 2, sizes.end());
  RecordProperty("per_stream_p50_io_bytes", std::to_string(sizes[sizes.size() / 2]));
  double ratio = simulate_throughput(per, {}).effective_bytes_per_second /
                 simulate_throughput(chunk, {}).effective_bytes_per_second;
  RecordProperty("per_stream_over_chunked", std::to_string(ratio));
  EXPECT_LT(ratio, 0.10);
  EXPECT_EQ(chunk.fetched_bytes, reader.footer().stripes.back().offset + reader.footer().stripes.back().data_length -
                                     reader.footer().stripes.front().offset);
}

TEST(Planner, PopularityPrefixHasNoOverRead) {
  auto profile = DatasetProfile::preset("rm3", 40);
  auto schema = profile.schema();
  SampleGenerator gen(schema, 5);
  std::vector<Sample> rows;
  for (int i = 0; i < 300; ++i) rows.push_back(gen.next());
  auto rank = popularity_rank(schema, 5);
  WriterConfig cfg;
  cfg.stripe_rows = 100;
  cfg.order = OrderPolicy::Popularity;
  for (size_t i = 0; i < rank.size(); ++i) cfg.weights.push_back({rank[i], static_cast<double>(rank.size() - i)});
  MemorySink sink;
  write_table(rows, schema, cfg, sink);
  TableReader reader(std::make_shared<MemorySource>(sink.take()));
  for (size_t k : {1, 5, 20, 60}) {
    FeatureProjection top(std::vector<FeatureId>(rank.begin(), rank.begin() + k));
    auto plan = plan_coalesced(reader.footer(), reader.stripes(), 0, 2, top, kDefaultCoalesceWindow);
    EXPECT_EQ(plan.over_read(), 0u) << "k=" << k;
    EXPECT_EQ(plan.ios.size(), 3u);
  }
}
