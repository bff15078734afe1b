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

// Domain types shared across the pipeline: samples, schemas, sessions,
// splits, tensor batches and worker statistics.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsi/transforms.h"

namespace dsi {

enum class FeatureKind : uint8_t { Dense = 0, Sparse = 1, ScoredSparse = 2 };

const char* kind_name(FeatureKind k);

using ops::ScoredId;

/// One training row. A feature missing from every map is "not covered".
struct Sample {
  std::map<FeatureId, double> dense;
  std::map<FeatureId, std::vector<int64_t>> sparse;
  std::map<FeatureId, std::vector<ScoredId>> scored;
  float label = 0.0f;

  bool operator==(const Sample&) const = default;
  size_t feature_count() const { return dense.size() + sparse.size() + scored.size(); }
};

struct FeatureSpec {
  FeatureId id = 0;
  FeatureKind kind = FeatureKind::Dense;
  double coverage = 1.0;
  double mean_length = 0.0;  // 0 for dense

  bool operator==(const FeatureSpec&) const = default;
};

class TableSchema {
 public:
  TableSchema() = default;
  /// Throws SchemaError on duplicate ids, coverage outside [0,1], or a
  /// nonzero mean length on a dense feature.
  TableSchema(std::string table, std::string partition, std::vector<FeatureSpec> features);

  const std::string& table() const { return table_; }
  const std::string& partition() const { return partition_; }
  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec* find(FeatureId id) const;
  /// Position of id in features(), or -1.
  ptrdiff_t index_of(FeatureId id) const;
  bool contains(FeatureId id) const { return find(id) != nullptr; }

  /// Throws SchemaError naming the offending feature.
  void check_sample(const Sample& s) const;

  bool operator==(const TableSchema& o) const {
    return table_ == o.table_ && partition_ == o.partition_ && features_ == o.features_;
  }

 private:
  std::string table_;
  std::string partition_;
  std::vector<FeatureSpec> features_;
  std::unordered_map<FeatureId, size_t> index_;
};

/// Requested columns, kept sorted and unique.
class FeatureProjection {
 public:
  FeatureProjection() = default;
  explicit FeatureProjection(std::vector<FeatureId> ids);

  static FeatureProjection all(const TableSchema& schema);

  const std::vector<FeatureId>& ids() const { return ids_; }
  bool contains(FeatureId id) const { return std::binary_search(ids_.begin(), ids_.end(), id); }
  size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  bool operator==(const FeatureProjection&) const = default;

 private:
  std::vector<FeatureId> ids_;
};

struct SessionSpec {
  std::string table;
  std::string dataset_dir;  // where the table manifest lives
  std::vector<std::string> partitions;
  FeatureProjection projection;
  TransformGraph graph;
  uint32_t batch_size = 1;
  uint64_t split_size = 1;

  /// Stable digest of the spec, stored in checkpoints.
  uint64_t digest() const;
  std::string to_json() const;
  static SessionSpec from_json(const std::string& text);
};

struct ValidationReport {
  std::vector<FeatureId> unknown_features;
  /// (node output, missing input) pairs.
  std::vector<std::pair<FeatureId, FeatureId>> dangling_inputs;
  std::vector<std::string> problems;

  bool ok() const { return unknown_features.empty() && dangling_inputs.empty() && problems.empty(); }
  std::string to_string() const;
};

ValidationReport validate_session(const SessionSpec& spec, const TableSchema& schema);

struct Split {
  uint64_t id = 0;
  std::string path;
  uint32_t first_stripe = 0;
  uint32_t last_stripe = 0;  // inclusive
  uint64_t first_row = 0;    // table-global, inclusive
  uint64_t last_row = 0;     // exclusive
  uint64_t file_first_row = 0;  // table-global row of the file's row 0

  uint64_t rows() const { return last_row - first_row; }
  bool operator==(const Split&) const = default;
};

struct DenseTensor {
  FeatureId feature = 0;
  uint32_t width = 1;
  std::vector<float> values;  // rows * width, row-major
  bool operator==(const DenseTensor&) const = default;
};

struct SparseTensor {
  FeatureId feature = 0;
  std::vector<int64_t> values;
  std::vector<int32_t> offsets;  // rows + 1
  std::vector<float> scores;     // empty unless the feature is scored
  bool operator==(const SparseTensor&) const = default;
};

struct TensorBatch {
  uint64_t batch_id = 0;
  uint64_t split_id = 0;
  uint32_t rows = 0;
  std::vector<DenseTensor> dense;
  std::vector<SparseTensor> sparse;
  std::vector<float> labels;
  std::vector<uint64_t> row_ids;

  /// CSR offsets and buffer sizes agree with the row count.
  bool valid() const;
  size_t byte_size() const;
  bool operator==(const TensorBatch&) const = default;
};

struct WorkerStats {
  double cpu = 0.0;
  double memory = 0.0;
  double network = 0.0;
  uint32_t buffered_batches = 0;
  uint64_t splits_completed = 0;
};

}  // namespace dsi
