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

#include "dsi/model.h"

#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsi/bytes.h"
#include "dsi/executor.h"

namespace dsi {

const char* kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Dense: return "dense";
    case FeatureKind::Sparse: return "sparse";
    case FeatureKind::ScoredSparse: return "scored";
  }
  return "?";
}

TableSchema::TableSchema(std::string table, std::string partition, std::vector<FeatureSpec> features)
    : table_(std::move(table)), partition_(std::move(partition)), features_(std::move(features)) {
  for (size_t i = 0; i < features_.size(); ++i) {
    const auto& f = features_[i];
    if (!index_.emplace(f.id, i).second) throw SchemaError("duplicate feature id " + std::to_string(f.id));
    if (!(f.coverage >= 0.0 && f.coverage <= 1.0))
      throw SchemaError("coverage of feature " + std::to_string(f.id) + " outside [0,1]");
    if (f.mean_length < 0.0 || (f.kind == FeatureKind::Dense && f.mean_length != 0.0))
      throw SchemaError("bad mean sparse length for feature " + std::to_string(f.id));
  }
}

const FeatureSpec* TableSchema::find(FeatureId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &features_[it->second];
}

ptrdiff_t TableSchema::index_of(FeatureId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : static_cast<ptrdiff_t>(it->second);
}

void TableSchema::check_sample(const Sample& s) const {
  auto expect = [&](FeatureId id, FeatureKind kind) {
    const auto* f = find(id);
    if (!f) throw SchemaError("feature " + std::to_string(id) + " not in schema");
    if (f->kind != kind)
      throw SchemaError("feature " + std::to_string(id) + " is " + kind_name(f->kind) + ", sample has " +
                        kind_name(kind));
  };
  for (const auto& [id, v] : s.dense) expect(id, FeatureKind::Dense);
  for (const auto& [id, v] : s.sparse) expect(id, FeatureKind::Sparse);
  for (const auto& [id, v] : s.scored) expect(id, FeatureKind::ScoredSparse);
}

FeatureProjection::FeatureProjection(std::vector<FeatureId> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

FeatureProjection FeatureProjection::all(const TableSchema& schema) {
  std::vector<FeatureId> ids;
  ids.reserve(schema.features().size());
  for (const auto& f : schema.features()) ids.push_back(f.id);
  return FeatureProjection(std::move(ids));
}

uint64_t SessionSpec::digest() const {
  std::string text = to_json();
  return fnv1a64({reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

std::string SessionSpec::to_json() const {
  nlohmann::json j;
  j["table"] = table;
  j["dataset_dir"] = dataset_dir;
  j["partitions"] = partitions;
  j["projection"] = projection.ids();
  j["transforms"] = format_manifest(graph);
  j["batch_size"] = batch_size;
  j["split_size"] = split_size;
  return j.dump();
}

SessionSpec SessionSpec::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    SessionSpec s;
    s.table = j.at("table").get<std::string>();
    s.dataset_dir = j.value("dataset_dir", "");
    s.partitions = j.at("partitions").get<std::vector<std::string>>();
    s.projection = FeatureProjection(j.at("projection").get<std::vector<FeatureId>>());
    s.graph = parse_manifest(j.value("transforms", ""));
    s.batch_size = j.at("batch_size").get<uint32_t>();
    s.split_size = j.at("split_size").get<uint64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("session spec: ") + e.what());
  }
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (FeatureId f : unknown_features) os << "unknown projected feature " << f << "\n";
  for (auto [out, in] : dangling_inputs) os << "node " << out << " consumes undefined input " << in << "\n";
  for (const auto& p : problems) os << p << "\n";
  return os.str();
}

ValidationReport validate_session(const SessionSpec& spec, const TableSchema& schema) {
  ValidationReport r;
  if (spec.partitions.empty()) r.problems.push_back("no partitions selected");
  if (spec.projection.empty()) r.problems.push_back("empty projection");
  if (spec.batch_size == 0) r.problems.push_back("batch size must be positive");
  if (spec.split_size == 0) r.problems.push_back("split size must be positive");
  if (spec.batch_size > spec.split_size) r.problems.push_back("batch size exceeds split size");
  for (FeatureId f : spec.projection.ids())
    if (!schema.contains(f)) r.unknown_features.push_back(f);

  // Walk nodes in order; an input is defined if projected or produced upstream.
  std::set<FeatureId> defined(spec.projection.ids().begin(), spec.projection.ids().end());
  std::set<FeatureId> outputs;
  for (const auto& n : spec.graph.nodes) {
    for (FeatureId in : n.inputs)
      if (!defined.count(in)) r.dangling_inputs.emplace_back(n.output, in);
    if (!outputs.insert(n.output).second) r.problems.push_back("duplicate output " + std::to_string(n.output));
    try {
      check_params(n.op, n.params);
    } catch (const SchemaError& e) {
      r.problems.push_back(e.what());
    }
    defined.insert(n.output);
  }
  if (r.ok() && !spec.graph.empty()) {
    try {
      compile_graph(spec.graph, spec.projection, schema);
    } catch (const SchemaError& e) {
      r.problems.push_back(e.what());
    }
  }
  return r;
}

bool TensorBatch::valid() const {
  if (labels.size() != rows || row_ids.size() != rows) return false;
  for (const auto& d : dense)
    if (d.width == 0 || d.values.size() != static_cast<size_t>(rows) * d.width) return false;
  for (const auto& s : sparse) {
    if (s.offsets.size() != static_cast<size_t>(rows) + 1 || s.offsets.front() != 0) return false;
    for (size_t i = 1; i < s.offsets.size(); ++i)
      if (s.offsets[i] < s.offsets[i - 1]) return false;
    if (static_cast<size_t>(s.offsets.back()) != s.values.size()) return false;
    if (!s.scores.empty() && s.scores.size() != s.values.size()) return false;
  }
  return true;
}

size_t TensorBatch::byte_size() const {
  size_t n = labels.size() * 4 + row_ids.size() * 8;
  for (const auto& d : dense) n += d.values.size() * 4;
  for (const auto& s : sparse) n += s.values.size() * 8 + s.offsets.size() * 4 + s.scores.size() * 4;
  return n;
}

}  // namespace dsi
