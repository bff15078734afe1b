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

// Independent reference implementations for tests. Nothing here calls into
// the library's operator or planner code.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "dsi/columnar.h"
#include "dsi/model.h"

namespace oracle {

inline uint64_t fnv(const std::vector<uint8_t>& bytes) {
  uint64_t h = 14695981039346656037ull;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

inline void put_le(std::vector<uint8_t>& out, int64_t v) {
  auto u = static_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(u >> (8 * i)));
}

inline uint64_t h64(const std::vector<int64_t>& ids) {
  std::vector<uint8_t> bytes;
  for (int64_t v : ids) put_le(bytes, v);
  return fnv(bytes);
}

inline uint32_t bucketize(double x, const std::vector<double>& borders) {
  uint32_t n = 0;
  for (double b : borders) n += b <= x;
  return n;
}

inline std::vector<int64_t> sigrid_hash(const std::vector<int64_t>& ids, uint64_t max) {
  std::vector<int64_t> out;
  for (int64_t id : ids) out.push_back(static_cast<int64_t>(h64({id}) % max));
  return out;
}

inline std::vector<int64_t> first_x(const std::vector<int64_t>& ids, uint32_t x) {
  std::vector<int64_t> out;
  for (size_t i = 0; i < ids.size() && i < x; ++i) out.push_back(ids[i]);
  return out;
}

inline double logit(double p, double eps) {
  double q = p;
  if (q < eps) q = eps;
  if (q > 1 - eps) q = 1 - eps;
  long double lq = q;
  return static_cast<double>(std::log(lq) - std::log1p(-lq));
}

inline double box_cox(double x, double lambda) {
  long double lx = x, ll = lambda;
  if (lambda == 0.0) return static_cast<double>(std::log(lx));
  return static_cast<double>((std::pow(lx, ll) - 1.0L) / ll);
}

inline int64_t positive_modulus(int64_t x, int64_t m) {
  // Floor division in 128 bits.
  __int128 q = x / m;
  if ((x % m != 0) && ((x < 0) != (m < 0))) --q;
  return static_cast<int64_t>(x - q * m);
}

inline std::vector<int64_t> intersect(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::vector<int64_t> out;
  for (int64_t x : a) {
    bool in_b = false, seen = false;
    for (int64_t y : b) in_b |= y == x;
    for (int64_t y : out) seen |= y == x;
    if (in_b && !seen) out.push_back(x);
  }
  return out;
}

inline std::vector<int64_t> ngram(const std::vector<int64_t>& ids, uint32_t n) {
  std::vector<int64_t> out;
  for (size_t i = 0; i + n <= ids.size(); ++i)
    out.push_back(static_cast<int64_t>(h64(std::vector<int64_t>(ids.begin() + i, ids.begin() + i + n))));
  return out;
}

inline std::vector<int64_t> cartesian(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::vector<int64_t> out;
  for (int64_t x : a)
    for (int64_t y : b) out.push_back(static_cast<int64_t>(h64({x, y})));
  return out;
}

inline uint8_t local_hour(int64_t ts, int64_t offset) {
  int64_t t = ts + offset;
  int64_t day = t / 86400;
  if (t % 86400 < 0) --day;
  return static_cast<uint8_t>((t - day * 86400) / 3600);
}

inline bool keep(double rate, uint64_t seed, uint64_t row) {
  std::vector<uint8_t> bytes;
  put_le(bytes, static_cast<int64_t>(seed));
  put_le(bytes, static_cast<int64_t>(row));
  if (rate >= 1.0) return true;
  if (rate <= 0.0) return false;
  // h / 2^64 < rate  <=>  h < ceil(rate * 2^64); the scaling is exact.
  auto bound = static_cast<unsigned __int128>(std::ceil(std::ldexp(rate, 64)));
  return static_cast<unsigned __int128>(fnv(bytes)) < bound;
}

/// Random schema with the given counts; coverage and lengths drawn per feature.
inline dsi::TableSchema random_schema(std::mt19937_64& rng, uint32_t dense, uint32_t sparse, uint32_t scored,
                                      double min_cov = 0.2) {
  std::uniform_real_distribution<double> cov(min_cov, 1.0), len(0.5, 12.0);
  std::vector<dsi::FeatureSpec> fs;
  dsi::FeatureId id = 1;
  for (uint32_t i = 0; i < dense; ++i) fs.push_back({id++, dsi::FeatureKind::Dense, cov(rng), 0.0});
  for (uint32_t i = 0; i < sparse; ++i) fs.push_back({id++, dsi::FeatureKind::Sparse, cov(rng), len(rng)});
  for (uint32_t i = 0; i < scored; ++i) fs.push_back({id++, dsi::FeatureKind::ScoredSparse, cov(rng), len(rng)});
  std::shuffle(fs.begin(), fs.end(), rng);
  return dsi::TableSchema("t", "2026-01-01", fs);
}

/// Rows with bit patterns chosen to catch lossy encodings: negative zero,
/// subnormals, huge ids and negative ids.
inline std::vector<dsi::Sample> random_rows(std::mt19937_64& rng, const dsi::TableSchema& schema, size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<dsi::Sample> rows(n);
  for (auto& s : rows) {
    s.label = u(rng) < 0.5 ? 1.0f : 0.0f;
    for (const auto& f : schema.features()) {
      if (u(rng) >= f.coverage) continue;
      if (f.kind == dsi::FeatureKind::Dense) {
        double r = u(rng);
        double v = r < 0.02 ? -0.0 : r < 0.04 ? 4.9e-324 : std::ldexp(u(rng) - 0.5, static_cast<int>(rng() % 80) - 40);
        s.dense[f.id] = v;
        continue;
      }
      std::geometric_distribution<int> g(1.0 / (1.0 + f.mean_length));
      int len = g(rng);
      auto rid = [&] {
        uint64_t k = rng() % 4;
        return k == 0 ? static_cast<int64_t>(rng()) : static_cast<int64_t>(rng() % 1000000);
      };
      if (f.kind == dsi::FeatureKind::Sparse) {
        auto& v = s.sparse[f.id];
        for (int i = 0; i < len; ++i) v.push_back(rid());
      } else {
        auto& v = s.scored[f.id];
        for (int i = 0; i < len; ++i) v.push_back({rid(), static_cast<float>(u(rng) * 4 - 2)});
      }
    }
  }
  return rows;
}

inline dsi::Sample filter(const dsi::Sample& s, const dsi::FeatureProjection& p) {
  dsi::Sample out;
  out.label = s.label;
  for (auto& [k, v] : s.dense)
    if (p.contains(k)) out.dense[k] = v;
  for (auto& [k, v] : s.sparse)
    if (p.contains(k)) out.sparse[k] = v;
  for (auto& [k, v] : s.scored)
    if (p.contains(k)) out.scored[k] = v;
  return out;
}

inline bool bit_equal(const dsi::Sample& a, const dsi::Sample& b) {
  if (a.label != b.label || a.sparse != b.sparse || a.scored != b.scored) return false;
  if (a.dense.size() != b.dense.size()) return false;
  for (auto ia = a.dense.begin(), ib = b.dense.begin(); ia != a.dense.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (std::memcmp(&ia->second, &ib->second, sizeof(double)) != 0) return false;
  }
  return true;
}

struct Interval {
  uint64_t begin, end;
  size_t streams;
};

inline std::vector<Interval> merge_oracle(const std::vector<dsi::StreamDescriptor>& sorted,
                                                    uint64_t window) {
  // Each I/O starts at some stream i and extends over every later stream j
  // with end_j - begin_i <= window; the next I/O starts at the first stream
  // left over.
  std::vector<Interval> out;
  size_t i = 0;
  while (i < sorted.size()) {
    Interval iv{sorted[i].offset, sorted[i].end(), 1};
    size_t j = i + 1;
    for (; j < sorted.size(); ++j) {
      bool fits = true;
      for (size_t k = i; k <= j; ++k) fits &= sorted[k].end() - sorted[i].offset <= window;
      if (!fits) break;
      iv.end = std::max(iv.end, sorted[j].end());
      ++iv.streams;
    }
    out.push_back(iv);
    i = j;
  }
  return out;
}

}  // namespace oracle
