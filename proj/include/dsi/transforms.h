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

// Preprocessing operator catalog and the per-feature transform graph.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsi/errors.h"

namespace dsi {

using FeatureId = uint32_t;

namespace ops {

/// Number of borders <= x.
uint32_t bucketize(double x, const std::vector<double>& borders);

/// FNV-1a-64(id) mod max, element-wise.
std::vector<int64_t> sigrid_hash(const std::vector<int64_t>& ids, uint64_t max);
int64_t sigrid_hash_one(int64_t id, uint64_t max);

template <typename T>
std::vector<T> first_x(const std::vector<T>& ids, uint32_t x) {
  if (x >= ids.size()) return ids;
  return std::vector<T>(ids.begin(), ids.begin() + x);
}

/// ln(q / (1 - q)) with q = clamp(p, eps, 1 - eps).
double logit(double p, double eps);

/// Throws DomainError for x <= 0.
double box_cox(double x, double lambda);

/// Out-of-range index yields an all-zero vector.
std::vector<float> onehot(uint32_t index, uint32_t cardinality);
/// As onehot, writing into out[0..cardinality). Returns false on a range miss.
bool onehot_into(int64_t index, uint32_t cardinality, float* out);

template <typename T>
T clamp(T x, T lo, T hi) {
  return x < lo ? lo : (hi < x ? hi : x);
}

/// Result in [0, m). Throws DomainError for m <= 0.
int64_t positive_modulus(int64_t x, int64_t m);

std::vector<std::pair<uint32_t, int64_t>> enumerate(const std::vector<int64_t>& ids);

/// Elements of a, in a's order with duplicates collapsed, that also occur in b.
std::vector<int64_t> id_list_intersect(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

int64_t map_id(int64_t id, const std::unordered_map<int64_t, int64_t>& table, int64_t fallback);

/// One hash per window of n consecutive ids; the hash covers the window's
/// little-endian bytes concatenated. n must be >= 1.
std::vector<int64_t> ngram(const std::vector<int64_t>& ids, uint32_t n);

/// Hash of (a_i || b_j) for every pair, a-major.
std::vector<int64_t> cartesian(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

struct ScoredId {
  int64_t id = 0;
  float score = 0.0f;
  bool operator==(const ScoredId&) const = default;
};

enum class ScoreOp : uint8_t { Sum, Scale, Max };

/// Sum and Max reduce to a scalar (0 for an empty list); Scale multiplies each score.
float compute_score_reduce(const std::vector<ScoredId>& scored, ScoreOp op);
std::vector<ScoredId> compute_score_scale(const std::vector<ScoredId>& scored, float factor);

/// Hour of day in [0, 24) for unix seconds shifted by offset seconds.
uint8_t get_local_hour(int64_t ts, int64_t offset);

/// keep <=> FNV-1a-64(seed || row) / 2^64 < rate.
bool sampling_keep(double rate, uint64_t seed, uint64_t row_index);

}  // namespace ops

enum class OpKind : uint8_t {
  Identity,
  Bucketize,
  SigridHash,
  FirstX,
  Logit,
  BoxCox,
  Onehot,
  Clamp,
  PositiveModulus,
  Enumerate,
  IdListTransform,
  MapId,
  NGram,
  Cartesian,
  ComputeScore,
  GetLocalHour,
  Sampling,
};

std::string_view op_name(OpKind op);
std::optional<OpKind> op_from_name(std::string_view name);

/// Cost class used for cycle accounting.
enum class OpClass : uint8_t { DenseNorm, SparseNorm, Generation, Other };
OpClass op_class(OpKind op);

struct OperatorParams {
  std::vector<double> borders;
  uint32_t x = 0;
  uint32_t n = 1;
  int64_t modulus = 1;
  double lambda = 0.0;
  double eps = 1e-6;
  uint64_t hash_max = 1;
  std::unordered_map<int64_t, int64_t> id_map;
  int64_t default_id = 0;
  double lo = 0.0;
  double hi = 0.0;
  double rate = 1.0;
  uint64_t seed = 0;
  int64_t utc_offset = 0;
  uint32_t cardinality = 1;
  ops::ScoreOp score_op = ops::ScoreOp::Sum;
  float scale = 1.0f;
};

/// Throws SchemaError when params violate the operator's constraints.
void check_params(OpKind op, const OperatorParams& p);

struct TransformNode {
  FeatureId output = 0;
  OpKind op = OpKind::Identity;
  OperatorParams params;
  std::vector<FeatureId> inputs;
};

/// Nodes in topological order; exactly one node per output id.
struct TransformGraph {
  std::vector<TransformNode> nodes;

  bool empty() const { return nodes.empty(); }
};

/// Parses the text manifest (grammar in docs/transforms.md). Nodes are
/// reordered topologically; throws SchemaError on a syntax error, cycle or
/// duplicate output.
TransformGraph parse_manifest(std::string_view text);
std::string format_manifest(const TransformGraph& graph);

/// Returns the nodes topologically sorted, or throws SchemaError on a cycle.
std::vector<TransformNode> topo_sort(std::vector<TransformNode> nodes);

}  // namespace dsi
