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

// Synthetic tables shaped like production recommendation datasets, plus the
// on-disk manifest that describes a generated table.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsi/columnar.h"
#include "dsi/model.h"

namespace dsi {

struct DatasetProfile {
  std::string name = "custom";
  uint32_t dense_features = 0;
  uint32_t sparse_features = 0;
  uint32_t scored_features = 0;
  double coverage = 0.45;
  double mean_length = 25.97;  // geometric mean of sparse list lengths
  double zipf_exponent = 1.2;  // feature popularity law
  double projection_fraction = 0.11;
  uint64_t rows_per_partition = 0;
  uint32_t partitions = 1;
  uint32_t files_per_partition = 1;

  /// rm1 | rm2 | rm3; feature counts divided by feature_divisor (>= 1).
  static DatasetProfile preset(const std::string& name, uint32_t feature_divisor = 1);
  void check() const;
  uint32_t total_features() const { return dense_features + sparse_features + scored_features; }
  TableSchema schema(const std::string& partition = "") const;
};

struct TableFile {
  std::string path;  // relative to the dataset directory
  uint64_t rows = 0;
  uint64_t first_row = 0;  // table-global id of the file's row 0
  uint32_t stripe_rows = 0;
};

struct TablePartition {
  std::string key;  // YYYY-MM-DD
  std::vector<TableFile> files;
};

/// Contents of <dir>/manifest.json.
struct TableMetadata {
  std::string table;
  TableSchema schema;
  std::vector<TablePartition> partitions;
  std::vector<FeatureId> popularity_rank;  // most popular first
  uint64_t seed = 0;

  uint64_t total_rows() const;
  const TablePartition* partition(const std::string& key) const;

  void save(const std::string& dir) const;
  static TableMetadata load(const std::string& dir);
};

/// Samples from a truncated Zipf law over ranks [0, n).
class ZipfSampler {
 public:
  ZipfSampler(size_t n, double exponent);
  size_t operator()(std::mt19937_64& rng) const;
  double probability(size_t rank) const;

 private:
  std::vector<double> cdf_;
};

/// Features ranked by popularity for a table: a seeded permutation of the
/// schema's feature ids.
std::vector<FeatureId> popularity_rank(const TableSchema& schema, uint64_t seed);

/// Draws k distinct features, each pick Zipf-distributed over rank.
FeatureProjection sample_projection(const std::vector<FeatureId>& rank, double exponent, size_t k,
                                    std::mt19937_64& rng);

/// Row generator: coverage ~ Bernoulli, sparse lengths ~ Geometric(mean).
class SampleGenerator {
 public:
  SampleGenerator(const TableSchema& schema, uint64_t seed);
  Sample next();

 private:
  const TableSchema& schema_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_int_distribution<int64_t> id_{0, 999999};
  std::vector<std::geometric_distribution<int>> lengths_;
};

struct GenOptions {
  uint64_t seed = 1;
  WriterConfig writer;
  std::string first_date = "2026-01-01";
};

/// Writes the profile's partitions into dir as MDSI files plus manifest.json.
/// Deterministic in (profile, options).
TableMetadata gen_dataset(const DatasetProfile& profile, const GenOptions& options, const std::string& dir);

/// Date string `days` after date (YYYY-MM-DD).
std::string add_days(const std::string& date, int days);

}  // namespace dsi
