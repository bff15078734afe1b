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

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "dsi/columnar.h"
#include "dsi/io_planner.h"
#include "oracles.h"

using namespace dsi;

namespace {

struct Written {
  std::vector<uint8_t> bytes;
  FileFooter footer;
};

Written write(const std::vector<Sample>& rows, const TableSchema& schema, const WriterConfig& cfg) {
  MemorySink sink;
  auto footer = write_table(rows, schema, cfg, sink);
  return {sink.take(), footer};
}

TableReader open_bytes(std::vector<uint8_t> bytes) {
  return TableReader(std::make_shared<MemorySource>(std::move(bytes)));
}

std::vector<Sample> read_all(const TableReader& r, const FeatureProjection& p) {
  if (r.stripes().empty()) return {};
  auto last = static_cast<uint32_t>(r.stripes().size() - 1);
  return r.read_rows(0, last, p, plan_per_stream(r.footer(), r.stripes(), 0, last, p));
}

TableSchema tiny_schema() {
  return TableSchema("golden", "2026-01-01",
                     {{1, FeatureKind::Dense, 1.0, 0.0},
                      {2, FeatureKind::Sparse, 0.5, 2.0},
                      {3, FeatureKind::ScoredSparse, 0.5, 1.0}});
}

std::vector<Sample> tiny_rows() {
  std::vector<Sample> rows(3);
  rows[0].dense[1] = 1.5;
  rows[0].sparse[2] = {7, 300};
  rows[0].label = 1.0f;
  rows[1].dense[1] = -2.0;
  rows[1].scored[3] = {{5, 0.25f}};
  rows[2].dense[1] = 0.0;
  rows[2].sparse[2] = {};
  return rows;
}

}  // namespace

TEST(Columnar, RoundTripRandomSchemas) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    auto schema = oracle::random_schema(rng, 1 + rng() % 30, rng() % 30, rng() % 6);
    auto rows = oracle::random_rows(rng, schema, rng() % 700);
    WriterConfig cfg;
    cfg.stripe_rows = 1 + rng() % 200;
    cfg.codec = trial % 3 == 0 ? Codec::Deflate : Codec::Identity;
    cfg.order = static_cast<OrderPolicy>(trial % 3);
    cfg.seed = trial;
    auto w = write(rows, schema, cfg);
    auto reader = open_bytes(w.bytes);
    EXPECT_EQ(reader.rows(), rows.size());
    auto back = read_all(reader, FeatureProjection::all(schema));
    ASSERT_EQ(back.size(), rows.size());
    for (size_t i = 0; i < rows.size(); ++i) ASSERT_TRUE(oracle::bit_equal(back[i], rows[i])) << "row " << i;
  }
}

TEST(Columnar, RowGroupMatchesRowMajor) {
  std::mt19937_64 rng(22);
  auto schema = oracle::random_schema(rng, 10, 10, 3);
  auto rows = oracle::random_rows(rng, schema, 500);
  WriterConfig cfg;
  cfg.stripe_rows = 64;
  auto reader = open_bytes(write(rows, schema, cfg).bytes);
  std::vector<FeatureId> ids;
  for (const auto& f : schema.features())
    if (rng() % 3 == 0) ids.push_back(f.id);
  FeatureProjection proj(ids);
  auto last = static_cast<uint32_t>(reader.stripes().size() - 1);
  auto plan = plan_coalesced(reader.footer(), reader.stripes(), 1, last, proj, kDefaultCoalesceWindow);
  auto group = reader.read_row_group(1, last, proj, plan);
  ASSERT_TRUE(group.consistent());
  EXPECT_EQ(group.first_row_id, 64u);
  ASSERT_EQ(group.rows, rows.size() - 64);
  for (uint32_t r = 0; r < group.rows; ++r) EXPECT_TRUE(oracle::bit_equal(group.row(r), oracle::filter(rows[64 + r], proj)));
}

TEST(Columnar, ProjectionMatchesFilterOracle) {
  std::mt19937_64 rng(23);
  auto schema = oracle::random_schema(rng, 60, 30, 10);
  auto rows = oracle::random_rows(rng, schema, 2000);
  WriterConfig cfg;
  cfg.stripe_rows = 300;
  cfg.order = OrderPolicy::Random;
  auto reader = open_bytes(write(rows, schema, cfg).bytes);
  for (int t = 0; t < 20; ++t) {
    std::vector<FeatureId> ids;
    for (const auto& f : schema.features())
      if (rng() % 10 == 0) ids.push_back(f.id);
    FeatureProjection proj(ids);
    auto last = static_cast<uint32_t>(reader.stripes().size() - 1);
    auto plan = t % 2 ? plan_per_stream(reader.footer(), reader.stripes(), 0, last, proj)
                      : plan_coalesced(reader.footer(), reader.stripes(), 0, last, proj, 4096);
    auto got = reader.read_rows(0, last, proj, plan);
    ASSERT_EQ(got.size(), rows.size());
    for (size_t i = 0; i < rows.size(); ++i) ASSERT_TRUE(oracle::bit_equal(got[i], oracle::filter(rows[i], proj)));
  }
}

TEST(Columnar, UnknownProjectedFeatureIsSchemaError) {
  auto w = write(tiny_rows(), tiny_schema(), {});
  auto reader = open_bytes(w.bytes);
  EXPECT_THROW(plan_per_stream(reader.footer(), reader.stripes(), 0, 0, FeatureProjection({99})), SchemaError);
}

TEST(Columnar, NonconformingSampleIsSchemaError) {
  MemorySink sink;
  TableWriter w(tiny_schema(), {}, sink);
  Sample bad;
  bad.sparse[1] = {1};  // 1 is dense
  EXPECT_THROW(w.add(bad), SchemaError);
  Sample unknown;
  unknown.dense[42] = 1.0;
  EXPECT_THROW(w.add(unknown), SchemaError);
}

TEST(Columnar, AbsentFeatureWritesNoStreams) {
  auto schema = tiny_schema();
  std::vector<Sample> rows(4);
  for (auto& r : rows) r.dense[1] = 1.0;
  WriterConfig cfg;
  cfg.stripe_rows = 2;
  auto reader = open_bytes(write(rows, schema, cfg).bytes);
  for (const auto& st : reader.stripes()) {
    EXPECT_EQ(st.absent, (std::vector<FeatureId>{2, 3}));
    for (const auto& d : st.streams) EXPECT_TRUE(d.feature == 1 || d.feature == kLabelFeature);
  }
  auto back = read_all(reader, FeatureProjection::all(schema));
  EXPECT_EQ(back, rows);
}

TEST(Columnar, StreamSetPerKind) {
  auto reader = open_bytes(write(tiny_rows(), tiny_schema(), {}).bytes);
  std::map<FeatureId, std::vector<StreamKind>> kinds;
  for (const auto& d : reader.stripes()[0].streams) kinds[d.feature].push_back(d.kind);
  EXPECT_EQ(kinds[kLabelFeature], (std::vector<StreamKind>{StreamKind::Labels}));
  EXPECT_EQ(kinds[1], (std::vector<StreamKind>{StreamKind::Presence, StreamKind::Values}));
  EXPECT_EQ(kinds[2], (std::vector<StreamKind>{StreamKind::Presence, StreamKind::Lengths, StreamKind::Values}));
  EXPECT_EQ(kinds[3],
            (std::vector<StreamKind>{StreamKind::Presence, StreamKind::Lengths, StreamKind::Values, StreamKind::Scores}));
  EXPECT_EQ(reader.stripes()[0].streams.front().feature, kLabelFeature);
}

TEST(Columnar, EveryByteFlipIsDetected) {
  std::mt19937_64 rng(24);
  auto schema = oracle::random_schema(rng, 4, 4, 1, 0.9);
  auto rows = oracle::random_rows(rng, schema, 40);
  WriterConfig cfg;
  cfg.stripe_rows = 16;
  auto bytes = write(rows, schema, cfg).bytes;
  auto full = FeatureProjection::all(schema);
  for (size_t pos = 0; pos < bytes.size(); ++pos) {
    auto bad = bytes;
    bad[pos] ^= static_cast<uint8_t>(1 + rng() % 255);
    EXPECT_THROW(
        {
          auto r = open_bytes(std::move(bad));
          read_all(r, full);
        },
        FormatError)
        << "flip at " << pos << " of " << bytes.size();
  }
}

TEST(Columnar, EveryTruncationIsDetected) {
  std::mt19937_64 rng(25);
  auto schema = oracle::random_schema(rng, 3, 3, 1, 0.9);
  auto rows = oracle::random_rows(rng, schema, 30);
  WriterConfig cfg;
  cfg.stripe_rows = 8;
  cfg.codec = Codec::Deflate;
  auto bytes = write(rows, schema, cfg).bytes;
  for (size_t len = 0; len < bytes.size(); ++len) {
    std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + len);
    EXPECT_THROW(open_bytes(std::move(cut)), FormatError) << "length " << len;
  }
}

TEST(Columnar, FooterCodecsRoundTrip) {
  std::mt19937_64 rng(26);
  auto schema = oracle::random_schema(rng, 5, 5, 2);
  WriterConfig cfg;
  cfg.stripe_rows = 10;
  cfg.order = OrderPolicy::Popularity;
  cfg.weights = {{schema.features()[3].id, 5.0}, {schema.features()[1].id, 2.0}};
  auto w = write(oracle::random_rows(rng, schema, 35), schema, cfg);
  auto reader = open_bytes(w.bytes);
  auto ff = decode_file_footer(encode_file_footer(reader.footer()));
  EXPECT_EQ(ff.schema, reader.footer().schema);
  EXPECT_EQ(ff.stripes, reader.footer().stripes);
  EXPECT_EQ(ff.layout, reader.footer().layout);
  EXPECT_EQ(ff.popularity, reader.footer().popularity);
  for (const auto& st : reader.stripes()) EXPECT_EQ(decode_stripe_footer(encode_stripe_footer(st)), st);
  EXPECT_EQ(reader.footer().layout[0], schema.features()[3].id);
  EXPECT_EQ(reader.footer().layout[1], schema.features()[1].id);
}

TEST(Columnar, PopularityPrefixIsContiguous) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    auto schema = oracle::random_schema(rng, 20, 20, 4);
    std::vector<std::pair<uint64_t, FeatureProjection>> log;
    for (uint64_t i = 0; i < 50; ++i) {
      std::vector<FeatureId> ids;
      for (const auto& f : schema.features())
        if (rng() % (1 + f.id % 7) == 0) ids.push_back(f.id);
      log.emplace_back(i, FeatureProjection(ids));
    }
    WriterConfig cfg;
    cfg.stripe_rows = 50;
    cfg.order = OrderPolicy::Popularity;
    cfg.weights = reorder_weights(log, 50);
    auto reader = open_bytes(write(oracle::random_rows(rng, schema, 200), schema, cfg).bytes);
    const auto& layout = reader.footer().layout;
    size_t k = 1 + rng() % layout.size();
    std::set<FeatureId> top(layout.begin(), layout.begin() + k);
    for (const auto& st : reader.stripes()) {
      uint64_t lo = UINT64_MAX, hi = 0, bytes = 0;
      for (const auto& d : st.streams) {
        if (!top.count(d.feature)) continue;
        lo = std::min(lo, d.offset);
        hi = std::max(hi, d.end());
        bytes += d.length;
      }
      if (bytes) EXPECT_EQ(hi - lo, bytes) << "top-" << k << " streams not contiguous";
    }
  }
}

TEST(Columnar, ReorderWeightsCountSessions) {
  std::vector<std::pair<uint64_t, FeatureProjection>> log{
      {1, FeatureProjection({1, 2})}, {2, FeatureProjection({2, 3})}, {3, FeatureProjection({2})}};
  auto w = reorder_weights(log, 2, {1, 2, 3, 4});
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0], (FeatureWeight{2, 2.0}));
  EXPECT_EQ(w[1], (FeatureWeight{3, 1.0}));
  EXPECT_EQ(w[2], (FeatureWeight{1, 0.0}));
  EXPECT_EQ(w[3], (FeatureWeight{4, 0.0}));
}

TEST(Columnar, DoublingStripeRowsNeverAddsStripes) {
  std::mt19937_64 rng(28);
  auto schema = oracle::random_schema(rng, 5, 5, 0);
  for (int t = 0; t < 20; ++t) {
    auto rows = oracle::random_rows(rng, schema, rng() % 500);
    uint32_t k = 1 + rng() % 64;
    WriterConfig a, b;
    a.stripe_rows = k;
    b.stripe_rows = 2 * k;
    auto fa = write(rows, schema, a).footer, fb = write(rows, schema, b).footer;
    EXPECT_LE(fb.stripes.size(), fa.stripes.size());
  }
}

TEST(Columnar, FileSinkAndSource) {
  auto path = (std::filesystem::temp_directory_path() / "dsi-columnar-test.mdsi").string();
  {
    FileSink sink(path);
    write_table(tiny_rows(), tiny_schema(), {}, sink);
    sink.close();
  }
  auto reader = TableReader::open(path);
  EXPECT_EQ(read_all(reader, FeatureProjection::all(tiny_schema())), tiny_rows());
  std::filesystem::remove(path);
}

TEST(Columnar, GoldenFile) {
  WriterConfig cfg;
  cfg.stripe_rows = 2;
  auto bytes = write(tiny_rows(), tiny_schema(), cfg).bytes;
  std::string path = std::string(DSI_GOLDEN_DIR) + "/tiny.mdsi";
  if (std::getenv("DSI_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << path;
  std::vector<uint8_t> golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes, golden);
  auto back = read_all(open_bytes(golden), FeatureProjection::all(tiny_schema()));
  EXPECT_EQ(back, tiny_rows());
  // Framing: magic, version, trailing length and magic.
  ASSERT_GE(golden.size(), 14u);
  EXPECT_EQ(std::string(golden.begin(), golden.begin() + 4), "MDSI");
  EXPECT_EQ(golden[4] | golden[5] << 8, kFormatVersion);
  EXPECT_EQ(std::string(golden.end() - 4, golden.end()), "MDSI");
}
