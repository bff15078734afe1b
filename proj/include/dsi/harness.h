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

// Benchmark orchestration: the optimization ladder over generated tables,
// and report emission.

#include <cstdint>
#include <string>
#include <vector>

#include "dsi/dataset.h"
#include "dsi/io_planner.h"
#include "dsi/model.h"

namespace dsi {

/// A representative preprocessing graph over a projection: clamps and
/// bucketizes dense features; truncates, hashes, n-grams and crosses sparse
/// ones. Derived features get ids from 0x80000000 up.
TransformGraph default_graph(const FeatureProjection& projection, const TableSchema& schema);

constexpr FeatureId kDerivedBase = 0x80000000u;

struct LadderConfig {
  DatasetProfile profile = DatasetProfile::preset("rm1", 40);
  uint64_t seed = 7;
  uint32_t stripe_rows = 400;
  uint32_t large_stripe_factor = 8;
  uint64_t window_bytes = kDefaultCoalesceWindow;
  StorageModel storage;
  uint32_t projections = 50;       // sessions evaluated for storage
  uint32_t history = 200;          // sessions in the reordering log
  uint32_t worker_projections = 3; // sessions timed for worker throughput
  uint32_t worker_rows = 8192;
  uint32_t batch_size = 256;
  uint32_t repeats = 3;            // best of
  std::string dir;                 // dataset directory; reused when present
};

struct LadderRow {
  std::string name;
  double worker_batches_per_second = 0.0;
  double storage_bytes_per_second = 0.0;
  double worker_norm = 0.0;
  double storage_norm = 0.0;
  double reference_worker = 0.0;
  double reference_storage = 0.0;
  std::string note;
};

struct LadderReport {
  std::vector<LadderRow> rows;
  double projection_fraction = 0.0;
  uint64_t table_rows = 0;
  double mean_stripe_bytes = 0.0;

  const LadderRow& row(const std::string& name) const;
  std::string to_tsv() const;
  std::string to_md() const;
};

/// Writes the three ladder tables (random order at K rows per stripe,
/// popularity order at K and at K*factor) unless they already exist, plus a
/// manifest.json that exposes the popularity-ordered one as a table.
struct LadderTables {
  std::string random_path;
  std::string popular_path;
  std::string popular_large_path;
  std::vector<FeatureId> rank;
  std::vector<FeatureProjection> history;
};
LadderTables prepare_ladder_tables(const LadderConfig& cfg);

LadderReport run_ladder(const LadderConfig& cfg);

/// format is "tsv" or "md".
void emit_report(const LadderReport& report, const std::string& format, const std::string& path);

/// Fraction of all feature-stream bytes of a table held by the most popular
/// features that together receive `traffic` of projection accesses.
double popular_bytes_share(const std::string& table_path, const std::vector<FeatureProjection>& sessions,
                           double traffic);

}  // namespace dsi
