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

#include <cstdint>
#include <vector>

#include "dsi/model.h"

namespace dsi {

/// One feature's values across the rows of a row group. Dense values are
/// stored for every row (0.0 where not covered); list features use CSR
/// offsets with empty lists where not covered.
struct FeatureColumn {
  FeatureId feature = 0;
  FeatureKind kind = FeatureKind::Dense;
  std::vector<uint8_t> present;  // one byte per row
  std::vector<double> dense;
  std::vector<int32_t> offsets;  // rows + 1, list kinds only
  std::vector<int64_t> ids;
  std::vector<float> scores;  // ScoredSparse only

  void reserve_rows(size_t rows);
  size_t list_length(size_t row) const { return static_cast<size_t>(offsets[row + 1] - offsets[row]); }
};

/// Feature-major in-memory representation of a run of rows ("flatmap"),
/// matching both the on-disk stream layout and the tensor layout.
struct InMemoryRowGroup {
  uint32_t rows = 0;
  uint64_t first_row_id = 0;  // table-global id of row 0
  std::vector<float> labels;
  std::vector<FeatureColumn> columns;  // sorted by feature id

  const FeatureColumn* find(FeatureId id) const;

  /// Copy of rows [begin, end).
  InMemoryRowGroup slice(uint32_t begin, uint32_t end) const;
  /// Appends other's rows; both must carry the same feature set.
  void append(const InMemoryRowGroup& other);

  /// Row-major view of one row, for tests and oracles.
  Sample row(uint32_t r) const;
  bool consistent() const;
};

}  // namespace dsi
