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

// Random file layouts for planner tests: footers and stripe footers without
// any backing bytes.

#include <algorithm>
#include <random>
#include <vector>

#include "dsi/columnar.h"
#include "dsi/model.h"

namespace layouts {

using namespace dsi;

struct Layout {
  FileFooter footer;
  std::vector<StripeFooter> stripes;
};

// A stripe footer with a label stream followed by every feature's streams in
// a shuffled physical order, with random stream lengths.
inline Layout random_layout(std::mt19937_64& rng, uint32_t features, uint32_t nstripes = 1) {
  std::vector<FeatureSpec> specs;
  for (FeatureId f = 1; f <= features; ++f) specs.push_back({f, rng() % 2 ? FeatureKind::Dense : FeatureKind::Sparse, 0.5, 0.0});
  for (auto& s : specs)
    if (s.kind == FeatureKind::Sparse) s.mean_length = 5;
  Layout l;
  l.footer.schema = TableSchema("t", "", specs);
  std::vector<FeatureId> order;
  for (const auto& s : specs) order.push_back(s.id);
  std::shuffle(order.begin(), order.end(), rng);
  l.footer.layout = order;
  std::geometric_distribution<uint64_t> len(1.0 / 3000);
  uint64_t off = 6;
  for (uint32_t s = 0; s < nstripes; ++s) {
    StripeFooter st;
    st.rows = 100;
    StripeInfo info;
    info.offset = off;
    auto add = [&](FeatureId f, StreamKind k) {
      uint64_t n = 1 + len(rng);
      st.streams.push_back({f, k, off, n, n, Codec::Identity, 0});
      off += n;
    };
    add(kLabelFeature, StreamKind::Labels);
    for (FeatureId f : order) {
      if (rng() % 20 == 0) {
        st.absent.push_back(f);
        continue;
      }
      add(f, StreamKind::Presence);
      if (l.footer.schema.find(f)->kind == FeatureKind::Sparse) add(f, StreamKind::Lengths);
      add(f, StreamKind::Values);
    }
    std::sort(st.absent.begin(), st.absent.end());
    info.data_length = off - info.offset;
    info.rows = st.rows;
    l.footer.stripes.push_back(info);
    l.stripes.push_back(std::move(st));
  }
  return l;
}

inline FeatureProjection random_projection(std::mt19937_64& rng, uint32_t features, double fraction) {
  std::vector<FeatureId> ids;
  std::uniform_real_distribution<double> u(0, 1);
  for (FeatureId f = 1; f <= features; ++f)
    if (u(rng) < fraction) ids.push_back(f);
  if (ids.empty()) ids.push_back(1 + rng() % features);
  return FeatureProjection(ids);
}

}  // namespace layouts
