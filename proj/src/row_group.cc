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

#include "dsi/row_group.h"

#include <algorithm>

namespace dsi {

void FeatureColumn::reserve_rows(size_t rows) {
  present.reserve(rows);
  if (kind == FeatureKind::Dense) {
    dense.reserve(rows);
  } else {
    offsets.reserve(rows + 1);
  }
}

const FeatureColumn* InMemoryRowGroup::find(FeatureId id) const {
  auto it = std::lower_bound(columns.begin(), columns.end(), id,
                             [](const FeatureColumn& c, FeatureId f) { return c.feature < f; });
  return it != columns.end() && it->feature == id ? &*it : nullptr;
}

InMemoryRowGroup InMemoryRowGroup::slice(uint32_t begin, uint32_t end) const {
  InMemoryRowGroup out;
  end = std::min(end, rows);
  begin = std::min(begin, end);
  out.rows = end - begin;
  out.first_row_id = first_row_id + begin;
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.columns.reserve(columns.size());
  for (const auto& c : columns) {
    FeatureColumn s;
    s.feature = c.feature;
    s.kind = c.kind;
    s.present.assign(c.present.begin() + begin, c.present.begin() + end);
    if (c.kind == FeatureKind::Dense) {
      s.dense.assign(c.dense.begin() + begin, c.dense.begin() + end);
    } else {
      int32_t lo = c.offsets[begin], hi = c.offsets[end];
      s.offsets.reserve(out.rows + 1);
      for (uint32_t r = begin; r <= end; ++r) s.offsets.push_back(c.offsets[r] - lo);
      s.ids.assign(c.ids.begin() + lo, c.ids.begin() + hi);
      if (c.kind == FeatureKind::ScoredSparse) s.scores.assign(c.scores.begin() + lo, c.scores.begin() + hi);
    }
    out.columns.push_back(std::move(s));
  }
  return out;
}

void InMemoryRowGroup::append(const InMemoryRowGroup& other) {
  if (rows == 0 && columns.empty()) {
    *this = other;
    return;
  }
  if (other.columns.size() != columns.size()) throw Error("row group append: feature sets differ");
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  for (size_t i = 0; i < columns.size(); ++i) {
    auto& c = columns[i];
    const auto& o = other.columns[i];
    if (c.feature != o.feature) throw Error("row group append: feature sets differ");
    c.present.insert(c.present.end(), o.present.begin(), o.present.end());
    if (c.kind == FeatureKind::Dense) {
      c.dense.insert(c.dense.end(), o.dense.begin(), o.dense.end());
    } else {
      int32_t base = c.offsets.back();
      for (size_t r = 1; r < o.offsets.size(); ++r) c.offsets.push_back(base + o.offsets[r]);
      c.ids.insert(c.ids.end(), o.ids.begin(), o.ids.end());
      c.scores.insert(c.scores.end(), o.scores.begin(), o.scores.end());
    }
  }
  rows += other.rows;
}

Sample InMemoryRowGroup::row(uint32_t r) const {
  Sample s;
  s.label = labels[r];
  for (const auto& c : columns) {
    if (!c.present[r]) continue;
    switch (c.kind) {
      case FeatureKind::Dense:
        s.dense.emplace(c.feature, c.dense[r]);
        break;
      case FeatureKind::Sparse:
        s.sparse.emplace(c.feature, std::vector<int64_t>(c.ids.begin() + c.offsets[r], c.ids.begin() + c.offsets[r + 1]));
        break;
      case FeatureKind::ScoredSparse: {
        std::vector<ScoredId> v;
        for (int32_t i = c.offsets[r]; i < c.offsets[r + 1]; ++i) v.push_back({c.ids[i], c.scores[i]});
        s.scored.emplace(c.feature, std::move(v));
        break;
      }
    }
  }
  return s;
}

bool InMemoryRowGroup::consistent() const {
  if (labels.size() != rows) return false;
  for (const auto& c : columns) {
    if (c.present.size() != rows) return false;
    if (c.kind == FeatureKind::Dense) {
      if (c.dense.size() != rows) return false;
    } else {
      if (c.offsets.size() != static_cast<size_t>(rows) + 1 || c.offsets.front() != 0) return false;
      if (static_cast<size_t>(c.offsets.back()) != c.ids.size()) return false;
      if (c.kind == FeatureKind::ScoredSparse && c.scores.size() != c.ids.size()) return false;
    }
  }
  return true;
}

}  // namespace dsi
