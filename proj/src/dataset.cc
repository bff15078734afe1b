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

#include "dsi/dataset.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dsi {

namespace fs = std::filesystem;

DatasetProfile DatasetProfile::preset(const std::string& name, uint32_t feature_divisor) {
  if (feature_divisor == 0) throw Error("feature divisor must be >= 1");
  DatasetProfile p;
  p.name = name;
  if (name == "rm1") {
    p.dense_features = 12115;
    p.sparse_features = 1763;
    p.coverage = 0.45;
    p.mean_length = 25.97;
    p.projection_fraction = 0.11;
  } else if (name == "rm2") {
    p.dense_features = 12596;
    p.sparse_features = 1817;
    p.coverage = 0.41;
    p.mean_length = 25.57;
    p.projection_fraction = 0.10;
  } else if (name == "rm3") {
    p.dense_features = 5707;
    p.sparse_features = 188;
    p.coverage = 0.29;
    p.mean_length = 19.64;
    p.projection_fraction = 0.09;
  } else {
    throw Error("unknown preset '" + name + "' (expected rm1, rm2 or rm3)");
  }
  p.dense_features = std::max(1u, p.dense_features / feature_divisor);
  p.sparse_features = std::max(1u, p.sparse_features / feature_divisor);
  p.rows_per_partition = 100000;
  return p;
}

void DatasetProfile::check() const {
  if (total_features() == 0) throw Error("profile has no features");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw Error("coverage must be in (0, 1]");
  if (!(mean_length > 0.0) && sparse_features + scored_features > 0) throw Error("mean length must be positive");
  if (!(zipf_exponent > 0.0)) throw Error("zipf exponent must be positive");
  if (partitions == 0 || files_per_partition == 0) throw Error("partitions and files must be positive");
}

TableSchema DatasetProfile::schema(const std::string& partition) const {
  std::vector<FeatureSpec> features;
  FeatureId id = 0;
  for (uint32_t i = 0; i < dense_features; ++i) features.push_back({id++, FeatureKind::Dense, coverage, 0.0});
  for (uint32_t i = 0; i < sparse_features; ++i) features.push_back({id++, FeatureKind::Sparse, coverage, mean_length});
  for (uint32_t i = 0; i < scored_features; ++i)
    features.push_back({id++, FeatureKind::ScoredSparse, coverage, mean_length});
  return TableSchema(name, partition, std::move(features));
}

uint64_t TableMetadata::total_rows() const {
  uint64_t n = 0;
  for (const auto& p : partitions)
    for (const auto& f : p.files) n += f.rows;
  return n;
}

const TablePartition* TableMetadata::partition(const std::string& key) const {
  for (const auto& p : partitions)
    if (p.key == key) return &p;
  return nullptr;
}

void TableMetadata::save(const std::string& dir) const {
  nlohmann::json j;
  j["table"] = table;
  j["seed"] = seed;
  auto& feats = j["schema"] = nlohmann::json::array();
  for (const auto& f : schema.features())
    feats.push_back({{"id", f.id}, {"kind", kind_name(f.kind)}, {"coverage", f.coverage}, {"mean_length", f.mean_length}});
  auto& parts = j["partitions"] = nlohmann::json::array();
  for (const auto& p : partitions) {
    nlohmann::json pj{{"key", p.key}, {"files", nlohmann::json::array()}};
    for (const auto& f : p.files)
      pj["files"].push_back({{"path", f.path}, {"rows", f.rows}, {"first_row", f.first_row}, {"stripe_rows", f.stripe_rows}});
    parts.push_back(pj);
  }
  j["popularity_rank"] = popularity_rank;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("cannot write manifest in " + dir);
}

TableMetadata TableMetadata::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot read " + (fs::path(dir) / "manifest.json").string());
  try {
    auto j = nlohmann::json::parse(in);
    TableMetadata m;
    m.table = j.at("table").get<std::string>();
    m.seed = j.value("seed", uint64_t{0});
    std::vector<FeatureSpec> feats;
    for (const auto& f : j.at("schema")) {
      FeatureSpec s;
      s.id = f.at("id").get<FeatureId>();
      auto k = f.at("kind").get<std::string>();
      s.kind = k == "dense" ? FeatureKind::Dense : k == "sparse" ? FeatureKind::Sparse : FeatureKind::ScoredSparse;
      s.coverage = f.at("coverage").get<double>();
      s.mean_length = f.at("mean_length").get<double>();
      feats.push_back(s);
    }
    m.schema = TableSchema(m.table, "", std::move(feats));
    for (const auto& pj : j.at("partitions")) {
      TablePartition p;
      p.key = pj.at("key").get<std::string>();
      for (const auto& fj : pj.at("files"))
        p.files.push_back({fj.at("path").get<std::string>(), fj.at("rows").get<uint64_t>(),
                           fj.at("first_row").get<uint64_t>(), fj.at("stripe_rows").get<uint32_t>()});
      m.partitions.push_back(std::move(p));
    }
    m.popularity_rank = j.value("popularity_rank", std::vector<FeatureId>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

ZipfSampler::ZipfSampler(size_t n, double exponent) {
  if (n == 0) throw Error("zipf over empty support");
  cdf_.resize(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
    cdf_[i] = sum;
  }
  for (auto& c : cdf_) c /= sum;
}

size_t ZipfSampler::operator()(std::mt19937_64& rng) const {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  return std::min(static_cast<size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

double ZipfSampler::probability(size_t rank) const { return cdf_[rank] - (rank ? cdf_[rank - 1] : 0.0); }

std::vector<FeatureId> popularity_rank(const TableSchema& schema, uint64_t seed) {
  WriterConfig cfg;
  cfg.order = OrderPolicy::Random;
  cfg.seed = seed ^ 0x9e3779b97f4a7c15ULL;
  return layout_order(schema, cfg);
}

FeatureProjection sample_projection(const std::vector<FeatureId>& rank, double exponent, size_t k,
                                    std::mt19937_64& rng) {
  k = std::min(k, rank.size());
  ZipfSampler zipf(rank.size(), exponent);
  std::set<FeatureId> picked;
  // Rejection of repeats; once the head is exhausted fall back to a uniform
  // pick among the remaining ranks so the loop always terminates quickly.
  size_t misses = 0;
  while (picked.size() < k) {
    FeatureId f = rank[zipf(rng)];
    if (picked.insert(f).second) continue;
    if (++misses > 64 * k) {
      std::vector<FeatureId> rest;
      for (FeatureId r : rank)
        if (!picked.count(r)) rest.push_back(r);
      picked.insert(rest[std::uniform_int_distribution<size_t>(0, rest.size() - 1)(rng)]);
    }
  }
  return FeatureProjection(std::vector<FeatureId>(picked.begin(), picked.end()));
}

SampleGenerator::SampleGenerator(const TableSchema& schema, uint64_t seed) : schema_(schema), rng_(seed) {
  for (const auto& f : schema.features()) {
    double p = f.kind == FeatureKind::Dense ? 0.5 : 1.0 / (1.0 + f.mean_length);
    lengths_.emplace_back(p);
  }
}

Sample SampleGenerator::next() {
  Sample s;
  const auto& feats = schema_.features();
  for (size_t i = 0; i < feats.size(); ++i) {
    const auto& f = feats[i];
    if (unit_(rng_) >= f.coverage) continue;
    switch (f.kind) {
      case FeatureKind::Dense:
        s.dense.emplace_hint(s.dense.end(), f.id, normal_(rng_));
        break;
      case FeatureKind::Sparse: {
        std::vector<int64_t> ids(static_cast<size_t>(lengths_[i](rng_)));
        for (auto& x : ids) x = id_(rng_);
        s.sparse.emplace_hint(s.sparse.end(), f.id, std::move(ids));
        break;
      }
      case FeatureKind::ScoredSparse: {
        std::vector<ScoredId> ids(static_cast<size_t>(lengths_[i](rng_)));
        for (auto& x : ids) x = {id_(rng_), static_cast<float>(unit_(rng_))};
        s.scored.emplace_hint(s.scored.end(), f.id, std::move(ids));
        break;
      }
    }
  }
  s.label = unit_(rng_) < 0.5 ? 1.0f : 0.0f;
  return s;
}

std::string add_days(const std::string& date, int days) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(date.c_str(), "%d-%d-%d", &y, &m, &d) != 3) throw Error("bad date " + date);
  using namespace std::chrono;
  sys_days t = year_month_day{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  year_month_day r{t + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(r.year()), static_cast<unsigned>(r.month()),
                static_cast<unsigned>(r.day()));
  return buf;
}

TableMetadata gen_dataset(const DatasetProfile& profile, const GenOptions& options, const std::string& dir) {
  profile.check();
  fs::create_directories(dir);
  TableMetadata meta;
  meta.table = profile.name;
  meta.schema = profile.schema();
  meta.seed = options.seed;
  meta.popularity_rank = popularity_rank(meta.schema, options.seed);

  const uint64_t per_file = profile.rows_per_partition / profile.files_per_partition;
  uint64_t row = 0;
  for (uint32_t p = 0; p < profile.partitions; ++p) {
    TablePartition part;
    part.key = add_days(options.first_date, static_cast<int>(p));
    for (uint32_t f = 0; f < profile.files_per_partition; ++f) {
      uint64_t rows = f + 1 == profile.files_per_partition ? profile.rows_per_partition - per_file * f : per_file;
      std::ostringstream name;
      name << "part-" << part.key << "-" << f << ".mdsi";
      TableSchema schema = profile.schema(part.key);
      SampleGenerator gen(schema, options.seed * 1000003ULL + p * 1009ULL + f);
      FileSink sink((fs::path(dir) / name.str()).string());
      TableWriter writer(schema, options.writer, sink);
      for (uint64_t i = 0; i < rows; ++i) writer.add(gen.next());
      writer.close();
      sink.close();
      part.files.push_back({name.str(), rows, row, options.writer.stripe_rows});
      row += rows;
    }
    meta.partitions.push_back(std::move(part));
  }
  meta.save(dir);
  return meta;
}

}  // namespace dsi
