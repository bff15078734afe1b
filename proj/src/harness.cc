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

#include "dsi/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dsi/columnar.h"
#include "dsi/executor.h"

namespace dsi {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

TransformGraph default_graph(const FeatureProjection& projection, const TableSchema& schema) {
  TransformGraph g;
  FeatureId next = kDerivedBase;
  auto add = [&](OpKind op, std::vector<FeatureId> inputs, auto&& set) {
    TransformNode n;
    n.output = next++;
    n.op = op;
    n.inputs = std::move(inputs);
    set(n.params);
    g.nodes.push_back(std::move(n));
    return g.nodes.back().output;
  };
  auto none = [](OperatorParams&) {};
  uint32_t dense = 0, sparse = 0;
  std::optional<FeatureId> prev_sparse;
  for (FeatureId f : projection.ids()) {
    const FeatureSpec* spec = schema.find(f);
    if (!spec) throw SchemaError("feature " + std::to_string(f) + " not in schema");
    switch (spec->kind) {
      case FeatureKind::Dense:
        if (dense++ % 2 == 0)
          add(OpKind::Clamp, {f}, [](OperatorParams& p) { p.lo = -3.0, p.hi = 3.0; });
        else
          add(OpKind::Bucketize, {f}, [](OperatorParams& p) { p.borders = {-2, -1, -0.5, 0, 0.5, 1, 2}; });
        break;
      case FeatureKind::Sparse: {
        auto hash = [](OperatorParams& p) { p.hash_max = 100000; };
        switch (sparse % 3) {
          case 0: add(OpKind::SigridHash, {add(OpKind::FirstX, {f}, [](OperatorParams& p) { p.x = 16; })}, hash); break;
          case 1: add(OpKind::PositiveModulus, {f}, [](OperatorParams& p) { p.modulus = 1000; }); break;
          case 2: add(OpKind::SigridHash, {add(OpKind::NGram, {f}, [](OperatorParams& p) { p.n = 2; })}, hash); break;
        }
        if (sparse % 4 == 3 && prev_sparse) add(OpKind::Cartesian, {*prev_sparse, f}, none);
        prev_sparse = f;
        ++sparse;
        break;
      }
      case FeatureKind::ScoredSparse:
        add(OpKind::ComputeScore, {f}, [](OperatorParams& p) { p.score_op = ops::ScoreOp::Sum; });
        break;
    }
  }
  return g;
}

const LadderRow& LadderReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw Error("no ladder row named " + name);
}

std::string LadderReport::to_tsv() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "config\tworker_batches_per_s\tworker_norm\treference_worker\tstorage_MBps\tstorage_norm\treference_storage\tnote\n";
  for (const auto& r : rows)
    os << r.name << '\t' << r.worker_batches_per_second << '\t' << r.worker_norm << '\t' << r.reference_worker << '\t'
       << r.storage_bytes_per_second / 1e6 << '\t' << r.storage_norm << '\t' << r.reference_storage << '\t' << r.note
       << '\n';
  return os.str();
}

std::string LadderReport::to_md() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| |";
  for (const auto& r : rows) os << ' ' << r.name << " |";
  os << "\n|---|";
  for (size_t i = 0; i < rows.size(); ++i) os << "---|";
  os << "\n| Worker throughput (measured) |";
  for (const auto& r : rows) os << ' ' << r.worker_norm << " |";
  os << "\n| Worker throughput (reference) |";
  for (const auto& r : rows) os << ' ' << r.reference_worker << " |";
  os << "\n| Storage throughput (simulated) |";
  for (const auto& r : rows) os << ' ' << r.storage_norm << " |";
  os << "\n| Storage throughput (reference) |";
  for (const auto& r : rows) os << ' ' << r.reference_storage << " |";
  os << "\n\n" << table_rows << " rows, " << std::setprecision(1) << projection_fraction * 100
     << "% of features projected, mean stripe " << std::setprecision(2) << mean_stripe_bytes / (1 << 20) << " MiB\n";
  return os.str();
}

void emit_report(const LadderReport& report, const std::string& format, const std::string& path) {
  std::string text;
  if (format == "tsv") text = report.to_tsv();
  else if (format == "md") text = report.to_md();
  else throw Error("unknown report format '" + format + "' (expected tsv or md)");
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

namespace {

std::string ladder_key(const LadderConfig& c) {
  nlohmann::json j{{"name", c.profile.name},
                   {"dense", c.profile.dense_features},
                   {"sparse", c.profile.sparse_features},
                   {"scored", c.profile.scored_features},
                   {"coverage", c.profile.coverage},
                   {"mean_length", c.profile.mean_length},
                   {"zipf", c.profile.zipf_exponent},
                   {"rows", c.profile.rows_per_partition},
                   {"seed", c.seed},
                   {"stripe_rows", c.stripe_rows},
                   {"factor", c.large_stripe_factor},
                   {"history", c.history}};
  return j.dump();
}

size_t projection_size(const DatasetProfile& p) {
  return std::max<size_t>(1, static_cast<size_t>(std::lround(p.projection_fraction * p.total_features())));
}

std::vector<FeatureProjection> sample_sessions(const std::vector<FeatureId>& rank, const DatasetProfile& p,
                                               uint32_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FeatureProjection> out;
  for (uint32_t i = 0; i < n; ++i) out.push_back(sample_projection(rank, p.zipf_exponent, projection_size(p), rng));
  return out;
}

}  // namespace

LadderTables prepare_ladder_tables(const LadderConfig& cfg) {
  if (cfg.dir.empty()) throw Error("ladder needs a dataset directory");
  cfg.profile.check();
  fs::create_directories(cfg.dir);
  LadderTables t;
  t.random_path = (fs::path(cfg.dir) / "random.mdsi").string();
  t.popular_path = (fs::path(cfg.dir) / "popular.mdsi").string();
  t.popular_large_path = (fs::path(cfg.dir) / "popular-large.mdsi").string();
  TableSchema schema = cfg.profile.schema();
  t.rank = popularity_rank(schema, cfg.seed);
  t.history = sample_sessions(t.rank, cfg.profile, cfg.history, cfg.seed + 1);

  const fs::path key_path = fs::path(cfg.dir) / "ladder.json";
  const std::string key = ladder_key(cfg);
  if (fs::exists(key_path) && fs::exists(t.random_path) && fs::exists(t.popular_path) &&
      fs::exists(t.popular_large_path)) {
    std::ifstream in(key_path);
    std::string have((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (have == key) return t;
  }

  std::vector<std::pair<uint64_t, FeatureProjection>> log;
  for (size_t i = 0; i < t.history.size(); ++i) log.emplace_back(i, t.history[i]);
  std::vector<FeatureId> universe;
  for (const auto& f : schema.features()) universe.push_back(f.id);
  auto weights = reorder_weights(log, cfg.history, universe);

  WriterConfig random_cfg;
  random_cfg.stripe_rows = cfg.stripe_rows;
  random_cfg.order = OrderPolicy::Random;
  random_cfg.seed = cfg.seed;
  WriterConfig popular_cfg = random_cfg;
  popular_cfg.order = OrderPolicy::Popularity;
  popular_cfg.weights = weights;
  WriterConfig large_cfg = popular_cfg;
  large_cfg.stripe_rows = cfg.stripe_rows * cfg.large_stripe_factor;

  spdlog::info("generating ladder tables ({} rows, {} features) in {}", cfg.profile.rows_per_partition,
               cfg.profile.total_features(), cfg.dir);
  FileSink s1(t.random_path), s2(t.popular_path), s3(t.popular_large_path);
  TableWriter w1(schema, random_cfg, s1), w2(schema, popular_cfg, s2), w3(schema, large_cfg, s3);
  SampleGenerator gen(schema, cfg.seed);
  for (uint64_t i = 0; i < cfg.profile.rows_per_partition; ++i) {
    Sample s = gen.next();
    w1.add(s);
    w2.add(s);
    w3.add(s);
  }
  w1.close();
  w2.close();
  w3.close();
  s1.close();
  s2.close();
  s3.close();
  TableMetadata meta;
  meta.table = cfg.profile.name;
  meta.schema = schema;
  meta.seed = cfg.seed;
  meta.popularity_rank = t.rank;
  meta.partitions.push_back({"ladder", {{"popular.mdsi", cfg.profile.rows_per_partition, 0, cfg.stripe_rows}}});
  meta.save(cfg.dir);
  std::ofstream(key_path) << key;
  return t;
}

namespace {

enum class Decode { AllRowMajor, RowMajor, Columnar };
enum class Planner { WholeStripe, PerStream, Coalesced };

ReadPlan make_plan(Planner p, const TableReader& r, uint32_t first, uint32_t last, const FeatureProjection& proj,
                   uint64_t window) {
  switch (p) {
    case Planner::WholeStripe: return plan_whole_stripes(r.footer(), r.stripes(), first, last, proj);
    case Planner::PerStream: return plan_per_stream(r.footer(), r.stripes(), first, last, proj);
    case Planner::Coalesced: return plan_coalesced(r.footer(), r.stripes(), first, last, proj, window);
  }
  throw Error("bad planner");
}

double storage_rate(const TableReader& r, Planner p, const std::vector<FeatureProjection>& sessions,
                    const LadderConfig& cfg) {
  double bytes = 0.0, seconds = 0.0;
  const auto last = static_cast<uint32_t>(r.stripes().size() - 1);
  for (const auto& proj : sessions) {
    auto plan = make_plan(p, r, 0, last, proj, cfg.window_bytes);
    auto sim = simulate_throughput(plan, cfg.storage);
    bytes += static_cast<double>(plan.requested_bytes);
    seconds += sim.seconds;
  }
  return bytes / seconds;
}

Sample filter(const Sample& s, const FeatureProjection& proj) {
  Sample out;
  out.label = s.label;
  for (FeatureId f : proj.ids()) {
    if (auto it = s.dense.find(f); it != s.dense.end()) out.dense.emplace(*it);
    if (auto it = s.sparse.find(f); it != s.sparse.end()) out.sparse.emplace(*it);
    if (auto it = s.scored.find(f); it != s.scored.end()) out.scored.emplace(*it);
  }
  return out;
}

double worker_rate(const TableReader& r, Planner planner, Decode decode, const std::vector<FeatureProjection>& sessions,
                   const LadderConfig& cfg) {
  const auto starts = r.footer().stripe_row_starts();
  uint32_t last = 0;
  while (last + 1 < r.stripes().size() && starts[last + 1] < cfg.worker_rows) ++last;
  const auto& schema = r.footer().schema;
  const FeatureProjection all = FeatureProjection::all(schema);

  std::vector<CompiledGraph> graphs;
  for (const auto& p : sessions) graphs.push_back(compile_graph(default_graph(p, schema), p, schema));

  double best = 0.0;
  for (uint32_t rep = 0; rep < cfg.repeats; ++rep) {
    uint64_t batches = 0;
    auto t0 = Clock::now();
    for (size_t i = 0; i < sessions.size(); ++i) {
      const auto& proj = sessions[i];
      GraphExecutor exec(graphs[i], cfg.batch_size);
      switch (decode) {
        case Decode::AllRowMajor: {
          auto plan = make_plan(planner, r, 0, last, all, cfg.window_bytes);
          auto rows = r.read_rows(0, last, all, plan);
          std::vector<Sample> kept;
          kept.reserve(rows.size());
          for (const auto& s : rows) kept.push_back(filter(s, proj));
          batches += exec.run(kept, 0).size();
          break;
        }
        case Decode::RowMajor: {
          auto plan = make_plan(planner, r, 0, last, proj, cfg.window_bytes);
          auto rows = r.read_rows(0, last, proj, plan);
          batches += exec.run(rows, 0).size();
          break;
        }
        case Decode::Columnar: {
          auto plan = make_plan(planner, r, 0, last, proj, cfg.window_bytes);
          batches += exec.run(r.read_row_group(0, last, proj, plan)).size();
          break;
        }
      }
    }
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    best = std::max(best, static_cast<double>(batches) / secs);
  }
  return best;
}

}  // namespace

LadderReport run_ladder(const LadderConfig& cfg) {
  LadderTables t = prepare_ladder_tables(cfg);
  TableReader random = TableReader::open(t.random_path);
  TableReader popular = TableReader::open(t.popular_path);
  TableReader large = TableReader::open(t.popular_large_path);

  auto sessions = sample_sessions(t.rank, cfg.profile, cfg.projections, cfg.seed + 2);
  std::vector<FeatureProjection> timed(sessions.begin(),
                                       sessions.begin() + std::min<size_t>(cfg.worker_projections, sessions.size()));

  LadderReport rep;
  rep.table_rows = random.rows();
  rep.projection_fraction = static_cast<double>(projection_size(cfg.profile)) / cfg.profile.total_features();
  double stripe_bytes = 0.0;
  for (const auto& s : random.footer().stripes) stripe_bytes += static_cast<double>(s.data_length);
  rep.mean_stripe_bytes = stripe_bytes / random.footer().stripes.size();

  struct Step {
    const char* name;
    const TableReader* reader;
    Planner planner;
    Decode decode;
    double reference_worker, reference_storage;
    std::string note;
  };
  const std::vector<Step> steps = {
      {"Baseline", &random, Planner::WholeStripe, Decode::AllRowMajor, 1.00, 1.00, "whole-stripe reads, all features decoded"},
      {"+FF", &random, Planner::PerStream, Decode::RowMajor, 2.00, 0.03, "projected streams only"},
      {"+FM", &random, Planner::PerStream, Decode::Columnar, 2.30, 0.03, "columnar flatmap decode"},
      {"+LO", &random, Planner::PerStream, Decode::Columnar, 2.94, 0.03, "no build-level toggles; same code as +FM"},
      {"+CR", &random, Planner::Coalesced, Decode::Columnar, 2.94, 0.99, "coalesced reads"},
      {"+FR", &popular, Planner::Coalesced, Decode::Columnar, 2.94, 1.84, "popularity-ordered layout"},
      {"+LS", &large, Planner::Coalesced, Decode::Columnar, 2.94, 2.41, "stripe rows x" + std::to_string(cfg.large_stripe_factor)},
  };
  for (const auto& s : steps) {
    LadderRow row;
    row.name = s.name;
    row.reference_worker = s.reference_worker;
    row.reference_storage = s.reference_storage;
    row.note = s.note;
    row.storage_bytes_per_second = storage_rate(*s.reader, s.planner, sessions, cfg);
    row.worker_batches_per_second = worker_rate(*s.reader, s.planner, s.decode, timed, cfg);
    spdlog::info("{}: worker {:.1f} batches/s, storage {:.2f} MB/s", row.name, row.worker_batches_per_second,
                 row.storage_bytes_per_second / 1e6);
    rep.rows.push_back(row);
  }
  for (auto& r : rep.rows) {
    r.worker_norm = r.worker_batches_per_second / rep.rows[0].worker_batches_per_second;
    r.storage_norm = r.storage_bytes_per_second / rep.rows[0].storage_bytes_per_second;
  }
  return rep;
}

double popular_bytes_share(const std::string& table_path, const std::vector<FeatureProjection>& sessions,
                           double traffic) {
  TableReader r = TableReader::open(table_path);
  std::map<FeatureId, double> bytes, hits;
  double total_bytes = 0.0, total_hits = 0.0;
  for (const auto& st : r.stripes())
    for (const auto& d : st.streams) {
      if (d.feature == kLabelFeature) continue;
      bytes[d.feature] += static_cast<double>(d.length);
      total_bytes += static_cast<double>(d.length);
    }
  for (const auto& p : sessions)
    for (FeatureId f : p.ids()) {
      hits[f] += 1.0;
      total_hits += 1.0;
    }
  std::vector<std::pair<double, FeatureId>> order;
  for (const auto& [f, b] : bytes) order.emplace_back(hits.count(f) ? hits[f] : 0.0, f);
  std::sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  double h = 0.0, b = 0.0;
  for (const auto& [count, f] : order) {
    if (h >= traffic * total_hits) break;
    h += count;
    b += bytes[f];
  }
  return total_bytes > 0 ? b / total_bytes : 0.0;
}

}  // namespace dsi
