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

// Evaluates a TransformGraph over mini-batches of projected rows and packs
// the results into TensorBatch buffers.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dsi/model.h"
#include "dsi/row_group.h"

namespace dsi {

enum class ValueKind : uint8_t { Dense, List, ScoredList };

/// A batch-local column of values. Dense columns hold rows*width doubles;
/// list columns use CSR offsets.
struct Column {
  ValueKind kind = ValueKind::Dense;
  uint32_t width = 1;
  std::vector<double> dense;
  std::vector<int32_t> offsets;
  std::vector<int64_t> ids;
  std::vector<float> scores;
};

struct CompiledGraph {
  struct Slot {
    FeatureId feature = 0;
    ValueKind kind = ValueKind::Dense;
    uint32_t width = 1;
  };
  struct Step {
    TransformNode node;
    std::vector<int> inputs;
    int output = 0;
  };
  std::vector<Slot> slots;
  std::vector<FeatureId> sources;  // raw features, occupying slots [0, sources.size())
  std::vector<Step> steps;
  std::vector<int> outputs;  // slots packed into each TensorBatch
};

/// Resolves inputs and checks operand kinds. An empty graph passes every
/// projected feature through unchanged. Throws SchemaError.
CompiledGraph compile_graph(const TransformGraph& graph, const FeatureProjection& projection,
                            const TableSchema& schema);

struct ExecStats {
  uint64_t rows_in = 0;
  uint64_t rows_out = 0;
  uint64_t rows_rejected = 0;   // operator domain errors
  uint64_t rows_sampled_out = 0;
  uint64_t onehot_misses = 0;
  uint64_t gather_nanos = 0;    // building input columns from rows
  std::array<uint64_t, 4> class_nanos{};  // indexed by OpClass

  void merge(const ExecStats& o);
  /// Share of transform time in each OpClass; zeros when nothing ran.
  std::array<double, 4> class_shares() const;
};

class GraphExecutor {
 public:
  GraphExecutor(CompiledGraph graph, uint32_t batch_size);

  /// Columnar path: input columns are slices of the flatmap.
  std::vector<TensorBatch> run(const InMemoryRowGroup& rows);
  /// Row-major path: input columns are gathered from per-row maps.
  std::vector<TensorBatch> run(std::span<const Sample> rows, uint64_t first_row_id);

  const ExecStats& stats() const { return stats_; }
  const CompiledGraph& graph() const { return graph_; }
  uint32_t batch_size() const { return batch_size_; }

 private:
  template <typename Gather>
  std::vector<TensorBatch> run_batches(uint32_t total_rows, uint64_t first_row_id, Gather&& gather);
  /// Returns false when every row of the batch was dropped.
  bool evaluate(std::vector<Column>& slots, uint32_t rows, uint64_t first_row_id, const std::vector<float>& labels,
                TensorBatch& out);

  CompiledGraph graph_;
  uint32_t batch_size_;
  ExecStats stats_;
};

/// Convenience wrapper: compile, then run the row-major path.
std::vector<TensorBatch> execute_graph(const TransformGraph& graph, const FeatureProjection& projection,
                                       const TableSchema& schema, std::span<const Sample> rows,
                                       uint32_t batch_size, uint64_t first_row_id = 0, ExecStats* stats = nullptr);

}  // namespace dsi
