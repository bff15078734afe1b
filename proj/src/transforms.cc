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

#include "dsi/transforms.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_set>

#include "dsi/bytes.h"

namespace dsi {
namespace ops {

uint32_t bucketize(double x, const std::vector<double>& borders) {
  return static_cast<uint32_t>(std::upper_bound(borders.begin(), borders.end(), x) - borders.begin());
}

int64_t sigrid_hash_one(int64_t id, uint64_t max) {
  return static_cast<int64_t>(fnv1a64_u64(static_cast<uint64_t>(id)) % max);
}

std::vector<int64_t> sigrid_hash(const std::vector<int64_t>& ids, uint64_t max) {
  std::vector<int64_t> out;
  out.reserve(ids.size());
  for (int64_t id : ids) out.push_back(sigrid_hash_one(id, max));
  return out;
}

double logit(double p, double eps) {
  double q = clamp(p, eps, 1.0 - eps);
  // log1p form near q = 0.5.
  if (q > 0.25 && q < 0.75) return std::log1p((2.0 * q - 1.0) / (1.0 - q));
  return std::log(q / (1.0 - q));
}

double box_cox(double x, double lambda) {
  if (!(x > 0.0)) throw DomainError("box_cox requires x > 0");
  if (lambda == 0.0) return std::log(x);
  return std::expm1(lambda * std::log(x)) / lambda;
}

std::vector<float> onehot(uint32_t index, uint32_t cardinality) {
  std::vector<float> out(cardinality, 0.0f);
  onehot_into(index, cardinality, out.data());
  return out;
}

bool onehot_into(int64_t index, uint32_t cardinality, float* out) {
  std::fill(out, out + cardinality, 0.0f);
  if (index < 0 || index >= static_cast<int64_t>(cardinality)) return false;
  out[index] = 1.0f;
  return true;
}

int64_t positive_modulus(int64_t x, int64_t m) {
  if (m <= 0) throw DomainError("positive_modulus requires m > 0");
  int64_t r = x % m;
  return r < 0 ? r + m : r;
}

std::vector<std::pair<uint32_t, int64_t>> enumerate(const std::vector<int64_t>& ids) {
  std::vector<std::pair<uint32_t, int64_t>> out;
  out.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) out.emplace_back(static_cast<uint32_t>(i), ids[i]);
  return out;
}

std::vector<int64_t> id_list_intersect(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::vector<int64_t> out;
  if (a.empty() || b.empty()) return out;
  // Lists are short (tens of ids); a sorted copy beats hashing here.
  std::vector<int64_t> rhs(b);
  std::sort(rhs.begin(), rhs.end());
  for (int64_t v : a) {
    if (!std::binary_search(rhs.begin(), rhs.end(), v)) continue;
    if (std::find(out.begin(), out.end(), v) != out.end()) continue;
    out.push_back(v);
  }
  return out;
}

int64_t map_id(int64_t id, const std::unordered_map<int64_t, int64_t>& table, int64_t fallback) {
  auto it = table.find(id);
  return it == table.end() ? fallback : it->second;
}

std::vector<int64_t> ngram(const std::vector<int64_t>& ids, uint32_t n) {
  std::vector<int64_t> out;
  if (n == 0 || ids.size() < n) return out;
  out.reserve(ids.size() - n + 1);
  for (size_t i = 0; i + n <= ids.size(); ++i) {
    uint64_t h = kFnvOffset;
    for (size_t j = i; j < i + n; ++j) h = fnv1a64_u64(static_cast<uint64_t>(ids[j]), h);
    out.push_back(static_cast<int64_t>(h));
  }
  return out;
}

std::vector<int64_t> cartesian(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::vector<int64_t> out;
  out.reserve(a.size() * b.size());
  for (int64_t x : a) {
    uint64_t ha = fnv1a64_u64(static_cast<uint64_t>(x));
    for (int64_t y : b) out.push_back(static_cast<int64_t>(fnv1a64_u64(static_cast<uint64_t>(y), ha)));
  }
  return out;
}

float compute_score_reduce(const std::vector<ScoredId>& scored, ScoreOp op) {
  if (scored.empty()) return 0.0f;
  if (op == ScoreOp::Max) {
    float m = scored.front().score;
    for (const auto& s : scored) m = std::max(m, s.score);
    return m;
  }
  float sum = 0.0f;
  for (const auto& s : scored) sum += s.score;
  return sum;
}

std::vector<ScoredId> compute_score_scale(const std::vector<ScoredId>& scored, float factor) {
  std::vector<ScoredId> out(scored);
  for (auto& s : out) s.score *= factor;
  return out;
}

uint8_t get_local_hour(int64_t ts, int64_t offset) {
  int64_t local = ts + offset;
  int64_t sec_of_day = ((local % 86400) + 86400) % 86400;
  return static_cast<uint8_t>(sec_of_day / 3600);
}

bool sampling_keep(double rate, uint64_t seed, uint64_t row_index) {
  if (rate >= 1.0) return true;
  if (rate <= 0.0) return false;
  uint64_t h = fnv1a64_u64(row_index, fnv1a64_u64(seed));
  // h / 2^64 < rate, computed in long double to keep all 64 bits.
  return static_cast<long double>(h) < static_cast<long double>(rate) * 18446744073709551616.0L;
}

}  // namespace ops

namespace {

struct OpEntry {
  OpKind op;
  std::string_view name;
  OpClass cls;
};

constexpr OpEntry kOps[] = {
    {OpKind::Identity, "identity", OpClass::Other},
    {OpKind::Bucketize, "bucketize", OpClass::Generation},
    {OpKind::SigridHash, "sigrid_hash", OpClass::SparseNorm},
    {OpKind::FirstX, "first_x", OpClass::SparseNorm},
    {OpKind::Logit, "logit", OpClass::DenseNorm},
    {OpKind::BoxCox, "box_cox", OpClass::DenseNorm},
    {OpKind::Onehot, "onehot", OpClass::DenseNorm},
    {OpKind::Clamp, "clamp", OpClass::DenseNorm},
    {OpKind::PositiveModulus, "positive_modulus", OpClass::SparseNorm},
    {OpKind::Enumerate, "enumerate", OpClass::Generation},
    {OpKind::IdListTransform, "id_list_transform", OpClass::Generation},
    {OpKind::MapId, "map_id", OpClass::Generation},
    {OpKind::NGram, "ngram", OpClass::Generation},
    {OpKind::Cartesian, "cartesian", OpClass::Generation},
    {OpKind::ComputeScore, "compute_score", OpClass::Generation},
    {OpKind::GetLocalHour, "get_local_hour", OpClass::Generation},
    {OpKind::Sampling, "sampling", OpClass::Other},
};

const OpEntry& entry(OpKind op) {
  for (const auto& e : kOps)
    if (e.op == op) return e;
  throw SchemaError("unknown operator");
}

[[noreturn]] void bad(const std::string& msg) { throw SchemaError("transform manifest: " + msg); }

template <typename T>
T parse_num(std::string_view s, std::string_view key) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    bad("bad value '" + std::string(s) + "' for " + std::string(key));
  return v;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

std::string_view op_name(OpKind op) { return entry(op).name; }

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& e : kOps)
    if (e.name == name) return e.op;
  return std::nullopt;
}

OpClass op_class(OpKind op) { return entry(op).cls; }

void check_params(OpKind op, const OperatorParams& p) {
  auto fail = [&](const char* what) {
    throw SchemaError(std::string(op_name(op)) + ": " + what);
  };
  switch (op) {
    case OpKind::Bucketize:
      if (p.borders.empty()) fail("borders must be nonempty");
      for (size_t i = 1; i < p.borders.size(); ++i)
        if (!(p.borders[i - 1] < p.borders[i])) fail("borders must be strictly increasing");
      break;
    case OpKind::SigridHash:
      if (p.hash_max == 0) fail("max must be > 0");
      break;
    case OpKind::NGram:
      if (p.n < 1) fail("n must be >= 1");
      break;
    case OpKind::PositiveModulus:
      if (p.modulus <= 0) fail("modulus must be > 0");
      break;
    case OpKind::Sampling:
      if (!(p.rate >= 0.0 && p.rate <= 1.0)) fail("rate must be in [0,1]");
      break;
    case OpKind::Logit:
      if (!(p.eps > 0.0 && p.eps < 0.5)) fail("eps must be in (0, 0.5)");
      break;
    case OpKind::Onehot:
      if (p.cardinality == 0) fail("cardinality must be > 0");
      break;
    case OpKind::Clamp:
      if (p.hi < p.lo) fail("lo must be <= hi");
      break;
    default:
      break;
  }
}

std::vector<TransformNode> topo_sort(std::vector<TransformNode> nodes) {
  std::map<FeatureId, size_t> producer;
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (!producer.emplace(nodes[i].output, i).second)
      throw SchemaError("transform graph: duplicate output " + std::to_string(nodes[i].output));
  }
  // Kahn's algorithm; ties resolved by original position for a stable order.
  std::vector<size_t> indegree(nodes.size(), 0);
  std::vector<std::vector<size_t>> users(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (FeatureId in : nodes[i].inputs) {
      auto it = producer.find(in);
      if (it == producer.end()) continue;
      ++indegree[i];
      users[it->second].push_back(i);
    }
  }
  std::vector<size_t> ready;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::vector<TransformNode> out;
  out.reserve(nodes.size());
  while (!ready.empty()) {
    auto it = std::min_element(ready.begin(), ready.end());
    size_t i = *it;
    ready.erase(it);
    for (size_t u : users[i])
      if (--indegree[u] == 0) ready.push_back(u);
    out.push_back(std::move(nodes[i]));
  }
  if (out.size() != nodes.size()) throw SchemaError("transform graph: cycle detected");
  return out;
}

TransformGraph parse_manifest(std::string_view text) {
  std::vector<TransformNode> nodes;
  size_t line_no = 0;
  for (std::string_view line : split_on(text, '\n')) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::vector<std::string_view> toks;
    for (auto t : split_on(line, ' '))
      if (!t.empty() && t != "\r") toks.push_back(t);
    if (toks.empty()) continue;
    if (toks.size() < 2) bad("line " + std::to_string(line_no) + ": expected '<out_id> <op> ...'");
    TransformNode node;
    node.output = parse_num<FeatureId>(toks[0], "out_id");
    auto op = op_from_name(toks[1]);
    if (!op) bad("line " + std::to_string(line_no) + ": unknown operator '" + std::string(toks[1]) + "'");
    node.op = *op;
    auto& p = node.params;
    for (size_t i = 2; i < toks.size(); ++i) {
      auto eq = toks[i].find('=');
      if (eq == std::string_view::npos) bad("line " + std::to_string(line_no) + ": expected key=value");
      auto key = toks[i].substr(0, eq);
      auto val = toks[i].substr(eq + 1);
      if (key == "inputs") {
        for (auto v : split_on(val, ',')) node.inputs.push_back(parse_num<FeatureId>(v, key));
      } else if (key == "borders") {
        for (auto v : split_on(val, ',')) p.borders.push_back(parse_num<double>(v, key));
      } else if (key == "x") {
        p.x = parse_num<uint32_t>(val, key);
      } else if (key == "n") {
        p.n = parse_num<uint32_t>(val, key);
      } else if (key == "modulus") {
        p.modulus = parse_num<int64_t>(val, key);
      } else if (key == "lambda") {
        p.lambda = parse_num<double>(val, key);
      } else if (key == "eps") {
        p.eps = parse_num<double>(val, key);
      } else if (key == "max") {
        p.hash_max = parse_num<uint64_t>(val, key);
      } else if (key == "map") {
        for (auto kv : split_on(val, ',')) {
          auto colon = kv.find(':');
          if (colon == std::string_view::npos) bad("map entries must be from:to");
          p.id_map[parse_num<int64_t>(kv.substr(0, colon), key)] = parse_num<int64_t>(kv.substr(colon + 1), key);
        }
      } else if (key == "default") {
        p.default_id = parse_num<int64_t>(val, key);
      } else if (key == "lo") {
        p.lo = parse_num<double>(val, key);
      } else if (key == "hi") {
        p.hi = parse_num<double>(val, key);
      } else if (key == "rate") {
        p.rate = parse_num<double>(val, key);
      } else if (key == "seed") {
        p.seed = parse_num<uint64_t>(val, key);
      } else if (key == "utc_offset") {
        p.utc_offset = parse_num<int64_t>(val, key);
      } else if (key == "cardinality") {
        p.cardinality = parse_num<uint32_t>(val, key);
      } else if (key == "score_op") {
        if (val == "sum") p.score_op = ops::ScoreOp::Sum;
        else if (val == "max") p.score_op = ops::ScoreOp::Max;
        else if (val == "scale") p.score_op = ops::ScoreOp::Scale;
        else bad("score_op must be sum|max|scale");
      } else if (key == "scale") {
        p.scale = parse_num<float>(val, key);
      } else {
        bad("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
      }
    }
    check_params(node.op, node.params);
    nodes.push_back(std::move(node));
  }
  return TransformGraph{topo_sort(std::move(nodes))};
}

std::string format_manifest(const TransformGraph& graph) {
  std::ostringstream os;
  for (const auto& n : graph.nodes) {
    const auto& p = n.params;
    os << n.output << ' ' << op_name(n.op);
    auto list = [&](const char* key, const auto& xs, auto fmt) {
      os << ' ' << key << '=';
      for (size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << fmt(xs[i]);
    };
    switch (n.op) {
      case OpKind::Bucketize: list("borders", p.borders, fmt_double); break;
      case OpKind::SigridHash: os << " max=" << p.hash_max; break;
      case OpKind::FirstX: os << " x=" << p.x; break;
      case OpKind::Logit: os << " eps=" << fmt_double(p.eps); break;
      case OpKind::BoxCox: os << " lambda=" << fmt_double(p.lambda); break;
      case OpKind::Onehot: os << " cardinality=" << p.cardinality; break;
      case OpKind::Clamp: os << " lo=" << fmt_double(p.lo) << " hi=" << fmt_double(p.hi); break;
      case OpKind::PositiveModulus: os << " modulus=" << p.modulus; break;
      case OpKind::MapId: {
        std::map<int64_t, int64_t> sorted(p.id_map.begin(), p.id_map.end());
        os << " map=";
        bool first = true;
        for (auto [k, v] : sorted) {
          os << (first ? "" : ",") << k << ':' << v;
          first = false;
        }
        os << " default=" << p.default_id;
        break;
      }
      case OpKind::NGram: os << " n=" << p.n; break;
      case OpKind::ComputeScore:
        os << " score_op=" << (p.score_op == ops::ScoreOp::Sum ? "sum" : p.score_op == ops::ScoreOp::Max ? "max" : "scale");
        if (p.score_op == ops::ScoreOp::Scale) os << " scale=" << fmt_double(p.scale);
        break;
      case OpKind::GetLocalHour: os << " utc_offset=" << p.utc_offset; break;
      case OpKind::Sampling: os << " rate=" << fmt_double(p.rate) << " seed=" << p.seed; break;
      default: break;
    }
    if (!n.inputs.empty()) list("inputs", n.inputs, [](FeatureId f) { return std::to_string(f); });
    os << '\n';
  }
  return os.str();
}

}  // namespace dsi
