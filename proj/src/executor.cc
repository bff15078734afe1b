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

#include "dsi/executor.h"

#include <chrono>
#include <cmath>
#include <map>
#include <string>

namespace dsi {

namespace {

using Clock = std::chrono::steady_clock;

uint64_t nanos_since(Clock::time_point t0) {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

ValueKind value_kind(FeatureKind k) {
  switch (k) {
    case FeatureKind::Dense: return ValueKind::Dense;
    case FeatureKind::Sparse: return ValueKind::List;
    case FeatureKind::ScoredSparse: return ValueKind::ScoredList;
  }
  return ValueKind::Dense;
}

bool is_list(ValueKind k) { return k != ValueKind::Dense; }

// Output slot type for a node, given its operands. Throws SchemaError.
CompiledGraph::Slot infer(const TransformNode& n, const std::vector<CompiledGraph::Slot>& in) {
  auto fail = [&](const std::string& why) -> CompiledGraph::Slot {
    throw SchemaError("node " + std::to_string(n.output) + " (" + std::string(op_name(n.op)) + "): " + why);
  };
  auto arity = [&](size_t k) {
    if (in.size() != k) fail("expects " + std::to_string(k) + " input(s), got " + std::to_string(in.size()));
  };
  auto scalar = [&](size_t i) {
    if (in[i].kind != ValueKind::Dense || in[i].width != 1) fail("input must be a scalar dense feature");
  };
  auto list = [&](size_t i) {
    if (!is_list(in[i].kind)) fail("input must be a sparse feature");
  };
  CompiledGraph::Slot out{n.output, ValueKind::Dense, 1};
  switch (n.op) {
    case OpKind::Identity:
      arity(1);
      out.kind = in[0].kind;
      out.width = in[0].width;
      break;
    case OpKind::Bucketize:
    case OpKind::Logit:
    case OpKind::BoxCox:
    case OpKind::GetLocalHour:
      arity(1);
      scalar(0);
      break;
    case OpKind::Onehot:
      arity(1);
      scalar(0);
      out.width = n.params.cardinality;
      break;
    case OpKind::Clamp:
      arity(1);
      if (in[0].kind == ValueKind::Dense) {
        scalar(0);
      } else {
        out.kind = in[0].kind;
      }
      break;
    case OpKind::SigridHash:
    case OpKind::FirstX:
    case OpKind::PositiveModulus:
    case OpKind::MapId:
      arity(1);
      list(0);
      out.kind = in[0].kind;
      break;
    case OpKind::Enumerate:
      arity(1);
      list(0);
      out.kind = ValueKind::ScoredList;
      break;
    case OpKind::IdListTransform:
    case OpKind::Cartesian:
      arity(2);
      list(0);
      list(1);
      out.kind = ValueKind::List;
      break;
    case OpKind::NGram:
      if (in.empty()) fail("expects at least one input");
      for (size_t i = 0; i < in.size(); ++i)
        if (in[i].kind == ValueKind::Dense) scalar(i);
      out.kind = ValueKind::List;
      break;
    case OpKind::ComputeScore:
      arity(1);
      if (in[0].kind != ValueKind::ScoredList) fail("input must be a scored sparse feature");
      out.kind = n.params.score_op == ops::ScoreOp::Scale ? ValueKind::ScoredList : ValueKind::Dense;
      break;
    case OpKind::Sampling:
      arity(0);
      break;
  }
  return out;
}

// Per-row id sequence of a column; dense scalars read as one id.
struct IdRow {
  const int64_t* ids = nullptr;
  const float* scores = nullptr;
  size_t size = 0;
  int64_t scalar = 0;
};

IdRow id_row(const Column& c, uint32_t r) {
  IdRow row;
  if (c.kind == ValueKind::Dense) {
    row.scalar = static_cast<int64_t>(c.dense[r]);
    row.ids = &row.scalar;
    row.size = 1;
    return row;
  }
  row.ids = c.ids.data() + c.offsets[r];
  row.size = static_cast<size_t>(c.offsets[r + 1] - c.offsets[r]);
  if (c.kind == ValueKind::ScoredList) row.scores = c.scores.data() + c.offsets[r];
  return row;
}

Column make_list(ValueKind kind, uint32_t rows) {
  Column c;
  c.kind = kind;
  c.offsets.reserve(rows + 1);
  c.offsets.push_back(0);
  return c;
}

void end_row(Column& c) { c.offsets.push_back(static_cast<int32_t>(c.ids.size())); }

// Element-wise map over a list column, preserving scores.
template <typename F>
Column map_ids(const Column& in, uint32_t rows, F&& f) {
  Column out = make_list(in.kind, rows);
  out.ids.reserve(in.ids.size());
  for (int64_t id : in.ids) out.ids.push_back(f(id));
  out.offsets = in.offsets;
  out.scores = in.scores;
  return out;
}

template <typename F>
Column map_dense(const Column& in, uint32_t rows, F&& f) {
  Column out;
  out.kind = ValueKind::Dense;
  out.dense.resize(rows);
  for (uint32_t r = 0; r < rows; ++r) out.dense[r] = f(in.dense[r], r);
  return out;
}

void gather_from_group(const FeatureColumn& fc, uint32_t begin, uint32_t end, Column& out) {
  out.kind = value_kind(fc.kind);
  out.width = 1;
  if (fc.kind == FeatureKind::Dense) {
    out.dense.assign(fc.dense.begin() + begin, fc.dense.begin() + end);
    return;
  }
  const int32_t lo = fc.offsets[begin], hi = fc.offsets[end];
  out.offsets.resize(end - begin + 1);
  for (uint32_t r = begin; r <= end; ++r) out.offsets[r - begin] = fc.offsets[r] - lo;
  out.ids.assign(fc.ids.begin() + lo, fc.ids.begin() + hi);
  if (fc.kind == FeatureKind::ScoredSparse) out.scores.assign(fc.scores.begin() + lo, fc.scores.begin() + hi);
}

void gather_from_samples(std::span<const Sample> rows, FeatureId f, ValueKind kind, Column& out) {
  out.kind = kind;
  out.width = 1;
  const uint32_t n = static_cast<uint32_t>(rows.size());
  if (kind == ValueKind::Dense) {
    out.dense.resize(n);
    for (uint32_t r = 0; r < n; ++r) {
      auto it = rows[r].dense.find(f);
      out.dense[r] = it == rows[r].dense.end() ? 0.0 : it->second;
    }
    return;
  }
  out.offsets.assign(1, 0);
  out.offsets.reserve(n + 1);
  out.ids.clear();
  out.scores.clear();
  for (uint32_t r = 0; r < n; ++r) {
    if (kind == ValueKind::List) {
      auto it = rows[r].sparse.find(f);
      if (it != rows[r].sparse.end()) out.ids.insert(out.ids.end(), it->second.begin(), it->second.end());
    } else {
      auto it = rows[r].scored.find(f);
      if (it != rows[r].scored.end())
        for (const auto& s : it->second) {
          out.ids.push_back(s.id);
          out.scores.push_back(s.score);
        }
    }
    out.offsets.push_back(static_cast<int32_t>(out.ids.size()));
  }
}

}  // namespace

void ExecStats::merge(const ExecStats& o) {
  rows_in += o.rows_in;
  rows_out += o.rows_out;
  rows_rejected += o.rows_rejected;
  rows_sampled_out += o.rows_sampled_out;
  onehot_misses += o.onehot_misses;
  gather_nanos += o.gather_nanos;
  for (size_t i = 0; i < class_nanos.size(); ++i) class_nanos[i] += o.class_nanos[i];
}

std::array<double, 4> ExecStats::class_shares() const {
  std::array<double, 4> out{};
  uint64_t total = 0;
  for (auto n : class_nanos) total += n;
  if (total == 0) return out;
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(class_nanos[i]) / static_cast<double>(total);
  return out;
}

CompiledGraph compile_graph(const TransformGraph& graph, const FeatureProjection& projection,
                            const TableSchema& schema) {
  CompiledGraph g;
  std::map<FeatureId, int> slot_of;
  auto add_source = [&](FeatureId f) {
    const auto* spec = schema.find(f);
    if (!spec) throw SchemaError("projected feature " + std::to_string(f) + " not in schema");
    slot_of[f] = static_cast<int>(g.slots.size());
    g.slots.push_back({f, value_kind(spec->kind), 1});
    g.sources.push_back(f);
  };

  if (graph.empty()) {
    for (FeatureId f : projection.ids()) add_source(f);
    for (size_t i = 0; i < g.slots.size(); ++i) g.outputs.push_back(static_cast<int>(i));
    return g;
  }

  std::map<FeatureId, bool> produced;
  for (const auto& n : graph.nodes) produced[n.output] = true;
  // Only raw features some node consumes are gathered.
  for (const auto& n : graph.nodes)
    for (FeatureId in : n.inputs)
      if (!produced.count(in) && !slot_of.count(in)) {
        if (!projection.contains(in))
          throw SchemaError("node " + std::to_string(n.output) + " consumes undefined input " + std::to_string(in));
        add_source(in);
      }

  for (const auto& n : topo_sort(graph.nodes)) {
    check_params(n.op, n.params);
    CompiledGraph::Step step{n, {}, 0};
    std::vector<CompiledGraph::Slot> operand;
    for (FeatureId in : n.inputs) {
      auto it = slot_of.find(in);
      if (it == slot_of.end())
        throw SchemaError("node " + std::to_string(n.output) + " consumes undefined input " + std::to_string(in));
      step.inputs.push_back(it->second);
      operand.push_back(g.slots[it->second]);
    }
    auto slot = infer(n, operand);
    step.output = static_cast<int>(g.slots.size());
    slot_of[n.output] = step.output;
    g.slots.push_back(slot);
    g.outputs.push_back(step.output);
    g.steps.push_back(std::move(step));
  }
  return g;
}

GraphExecutor::GraphExecutor(CompiledGraph graph, uint32_t batch_size)
    : graph_(std::move(graph)), batch_size_(batch_size) {
  if (batch_size_ == 0) throw SchemaError("batch size must be positive");
}

template <typename Gather>
std::vector<TensorBatch> GraphExecutor::run_batches(uint32_t total_rows, uint64_t first_row_id, Gather&& gather) {
  std::vector<TensorBatch> out;
  std::vector<Column> slots(graph_.slots.size());
  std::vector<float> labels;
  for (uint32_t begin = 0; begin < total_rows; begin += batch_size_) {
    const uint32_t end = std::min(total_rows, begin + batch_size_);
    auto t0 = Clock::now();
    gather(begin, end, slots, labels);
    stats_.gather_nanos += nanos_since(t0);
    TensorBatch b;
    if (evaluate(slots, end - begin, first_row_id + begin, labels, b)) out.push_back(std::move(b));
  }
  return out;
}

std::vector<TensorBatch> GraphExecutor::run(const InMemoryRowGroup& rows) {
  std::vector<const FeatureColumn*> cols;
  for (FeatureId f : graph_.sources) {
    const auto* c = rows.find(f);
    if (!c) throw SchemaError("row group lacks feature " + std::to_string(f));
    cols.push_back(c);
  }
  return run_batches(rows.rows, rows.first_row_id,
                     [&](uint32_t begin, uint32_t end, std::vector<Column>& slots, std::vector<float>& labels) {
                       for (size_t i = 0; i < cols.size(); ++i) gather_from_group(*cols[i], begin, end, slots[i]);
                       labels.assign(rows.labels.begin() + begin, rows.labels.begin() + end);
                     });
}

std::vector<TensorBatch> GraphExecutor::run(std::span<const Sample> rows, uint64_t first_row_id) {
  return run_batches(static_cast<uint32_t>(rows.size()), first_row_id,
                     [&](uint32_t begin, uint32_t end, std::vector<Column>& slots, std::vector<float>& labels) {
                       auto part = rows.subspan(begin, end - begin);
                       for (size_t i = 0; i < graph_.sources.size(); ++i)
                         gather_from_samples(part, graph_.sources[i], graph_.slots[i].kind, slots[i]);
                       labels.clear();
                       for (const auto& s : part) labels.push_back(s.label);
                     });
}

bool GraphExecutor::evaluate(std::vector<Column>& slots, uint32_t rows, uint64_t first_row_id,
                             const std::vector<float>& labels, TensorBatch& out) {
  stats_.rows_in += rows;
  std::vector<uint8_t> keep(rows, 1);
  std::vector<uint8_t> rejected(rows, 0);

  for (const auto& step : graph_.steps) {
    auto t0 = Clock::now();
    const auto& p = step.node.params;
    auto in = [&](size_t i) -> const Column& { return slots[step.inputs[i]]; };
    Column res;
    switch (step.node.op) {
      case OpKind::Identity:
        res = in(0);
        break;
      case OpKind::Bucketize:
        res = map_dense(in(0), rows, [&](double x, uint32_t) { return static_cast<double>(ops::bucketize(x, p.borders)); });
        break;
      case OpKind::Logit:
        res = map_dense(in(0), rows, [&](double x, uint32_t) { return ops::logit(x, p.eps); });
        break;
      case OpKind::BoxCox:
        res = map_dense(in(0), rows, [&](double x, uint32_t r) {
          if (!(x > 0.0)) {
            rejected[r] = 1;
            return 0.0;
          }
          return ops::box_cox(x, p.lambda);
        });
        break;
      case OpKind::GetLocalHour:
        res = map_dense(in(0), rows, [&](double x, uint32_t) {
          return static_cast<double>(ops::get_local_hour(static_cast<int64_t>(x), p.utc_offset));
        });
        break;
      case OpKind::Onehot: {
        res.kind = ValueKind::Dense;
        res.width = p.cardinality;
        res.dense.assign(static_cast<size_t>(rows) * p.cardinality, 0.0);
        std::vector<float> tmp(p.cardinality);
        for (uint32_t r = 0; r < rows; ++r) {
          double x = in(0).dense[r];
          int64_t idx = std::isfinite(x) && x >= 0 && x < 4294967296.0 ? static_cast<int64_t>(x) : -1;
          if (!ops::onehot_into(idx, p.cardinality, tmp.data())) ++stats_.onehot_misses;
          for (uint32_t k = 0; k < p.cardinality; ++k) res.dense[static_cast<size_t>(r) * p.cardinality + k] = tmp[k];
        }
        break;
      }
      case OpKind::Clamp:
        if (in(0).kind == ValueKind::Dense) {
          res = map_dense(in(0), rows, [&](double x, uint32_t) { return ops::clamp(x, p.lo, p.hi); });
        } else {
          auto lo = static_cast<int64_t>(std::ceil(p.lo)), hi = static_cast<int64_t>(std::floor(p.hi));
          res = map_ids(in(0), rows, [&](int64_t x) { return ops::clamp(x, lo, hi); });
        }
        break;
      case OpKind::SigridHash:
        res = map_ids(in(0), rows, [&](int64_t x) { return ops::sigrid_hash_one(x, p.hash_max); });
        break;
      case OpKind::PositiveModulus:
        res = map_ids(in(0), rows, [&](int64_t x) { return ops::positive_modulus(x, p.modulus); });
        break;
      case OpKind::MapId:
        res = map_ids(in(0), rows, [&](int64_t x) { return ops::map_id(x, p.id_map, p.default_id); });
        break;
      case OpKind::FirstX: {
        const Column& c = in(0);
        res = make_list(c.kind, rows);
        for (uint32_t r = 0; r < rows; ++r) {
          int32_t lo = c.offsets[r];
          int32_t hi = std::min<int64_t>(c.offsets[r + 1], static_cast<int64_t>(lo) + p.x);
          res.ids.insert(res.ids.end(), c.ids.begin() + lo, c.ids.begin() + hi);
          if (c.kind == ValueKind::ScoredList) res.scores.insert(res.scores.end(), c.scores.begin() + lo, c.scores.begin() + hi);
          end_row(res);
        }
        break;
      }
      case OpKind::Enumerate: {
        const Column& c = in(0);
        res = make_list(ValueKind::ScoredList, rows);
        for (uint32_t r = 0; r < rows; ++r) {
          auto row = id_row(c, r);
          for (size_t i = 0; i < row.size; ++i) {
            res.ids.push_back(row.ids[i]);
            res.scores.push_back(static_cast<float>(i));
          }
          end_row(res);
        }
        break;
      }
      case OpKind::IdListTransform:
      case OpKind::Cartesian: {
        res = make_list(ValueKind::List, rows);
        std::vector<int64_t> a, b;
        for (uint32_t r = 0; r < rows; ++r) {
          auto ra = id_row(in(0), r), rb = id_row(in(1), r);
          a.assign(ra.ids, ra.ids + ra.size);
          b.assign(rb.ids, rb.ids + rb.size);
          auto v = step.node.op == OpKind::Cartesian ? ops::cartesian(a, b) : ops::id_list_intersect(a, b);
          res.ids.insert(res.ids.end(), v.begin(), v.end());
          end_row(res);
        }
        break;
      }
      case OpKind::NGram: {
        res = make_list(ValueKind::List, rows);
        std::vector<int64_t> cat;
        for (uint32_t r = 0; r < rows; ++r) {
          cat.clear();
          for (size_t i = 0; i < step.inputs.size(); ++i) {
            auto row = id_row(in(i), r);
            cat.insert(cat.end(), row.ids, row.ids + row.size);
          }
          auto v = ops::ngram(cat, p.n);
          res.ids.insert(res.ids.end(), v.begin(), v.end());
          end_row(res);
        }
        break;
      }
      case OpKind::ComputeScore: {
        const Column& c = in(0);
        if (p.score_op == ops::ScoreOp::Scale) {
          res = c;
          for (auto& s : res.scores) s *= p.scale;
        } else {
          res.kind = ValueKind::Dense;
          res.dense.resize(rows);
          std::vector<ScoredId> tmp;
          for (uint32_t r = 0; r < rows; ++r) {
            tmp.clear();
            for (int32_t i = c.offsets[r]; i < c.offsets[r + 1]; ++i) tmp.push_back({c.ids[i], c.scores[i]});
            res.dense[r] = ops::compute_score_reduce(tmp, p.score_op);
          }
        }
        break;
      }
      case OpKind::Sampling: {
        res.kind = ValueKind::Dense;
        res.dense.assign(rows, 1.0);
        for (uint32_t r = 0; r < rows; ++r)
          if (!ops::sampling_keep(p.rate, p.seed, first_row_id + r)) keep[r] = 0;
        break;
      }
    }
    slots[step.output] = std::move(res);
    stats_.class_nanos[static_cast<size_t>(op_class(step.node.op))] += nanos_since(t0);
  }

  // Pack surviving rows.
  std::vector<uint32_t> live;
  live.reserve(rows);
  for (uint32_t r = 0; r < rows; ++r) {
    if (rejected[r]) {
      ++stats_.rows_rejected;
    } else if (!keep[r]) {
      ++stats_.rows_sampled_out;
    } else {
      live.push_back(r);
    }
  }
  if (live.empty()) return false;
  stats_.rows_out += live.size();
  const bool all = live.size() == rows;

  out.rows = static_cast<uint32_t>(live.size());
  out.labels.reserve(live.size());
  out.row_ids.reserve(live.size());
  for (uint32_t r : live) {
    out.labels.push_back(labels[r]);
    out.row_ids.push_back(first_row_id + r);
  }
  for (int s : graph_.outputs) {
    const auto& meta = graph_.slots[s];
    const Column& c = slots[s];
    if (meta.kind == ValueKind::Dense) {
      DenseTensor t{meta.feature, c.width, {}};
      t.values.reserve(live.size() * c.width);
      if (all) {
        t.values.assign(c.dense.begin(), c.dense.end());
      } else {
        for (uint32_t r : live)
          for (uint32_t k = 0; k < c.width; ++k) t.values.push_back(static_cast<float>(c.dense[static_cast<size_t>(r) * c.width + k]));
      }
      out.dense.push_back(std::move(t));
    } else {
      SparseTensor t{meta.feature, {}, {}, {}};
      if (all) {
        t.values = c.ids;
        t.offsets = c.offsets;
        if (meta.kind == ValueKind::ScoredList) t.scores = c.scores;
      } else {
        t.offsets.reserve(live.size() + 1);
        t.offsets.push_back(0);
        for (uint32_t r : live) {
          t.values.insert(t.values.end(), c.ids.begin() + c.offsets[r], c.ids.begin() + c.offsets[r + 1]);
          if (meta.kind == ValueKind::ScoredList)
            t.scores.insert(t.scores.end(), c.scores.begin() + c.offsets[r], c.scores.begin() + c.offsets[r + 1]);
          t.offsets.push_back(static_cast<int32_t>(t.values.size()));
        }
      }
      out.sparse.push_back(std::move(t));
    }
  }
  return true;
}

std::vector<TensorBatch> execute_graph(const TransformGraph& graph, const FeatureProjection& projection,
                                       const TableSchema& schema, std::span<const Sample> rows, uint32_t batch_size,
                                       uint64_t first_row_id, ExecStats* stats) {
  GraphExecutor ex(compile_graph(graph, projection, schema), batch_size);
  auto out = ex.run(rows, first_row_id);
  if (stats) stats->merge(ex.stats());
  return out;
}

}  // namespace dsi
