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

#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "dsi/dataset.h"
#include "log.h"

int main(int argc, char** argv) {
  dsi::tools::init_logging();
  CLI::App app{"Generate a synthetic table of MDSI files plus manifest.json"};
  std::string preset = "rm1", order = "schema", out, codec = "identity";
  uint64_t rows = 10000, seed = 1;
  uint32_t divisor = 1, partitions = 1, files = 1, stripe_rows = 4096, history = 200;
  app.add_option("--preset", preset, "rm1 | rm2 | rm3")->check(CLI::IsMember({"rm1", "rm2", "rm3"}));
  app.add_option("--rows", rows, "rows per partition");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--order", order, "physical feature order")->check(CLI::IsMember({"schema", "random", "popularity"}));
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--feature-divisor", divisor, "divide the preset's feature counts by this")->check(CLI::PositiveNumber);
  app.add_option("--partitions", partitions, "daily partitions")->check(CLI::PositiveNumber);
  app.add_option("--files", files, "files per partition")->check(CLI::PositiveNumber);
  app.add_option("--stripe-rows", stripe_rows, "rows per stripe")->check(CLI::PositiveNumber);
  app.add_option("--codec", codec, "stream codec")->check(CLI::IsMember({"identity", "deflate"}));
  app.add_option("--history", history, "sampled sessions that drive popularity order");
  CLI11_PARSE(app, argc, argv);

  try {
    auto profile = dsi::DatasetProfile::preset(preset, divisor);
    profile.rows_per_partition = rows;
    profile.partitions = partitions;
    profile.files_per_partition = files;
    dsi::GenOptions opt;
    opt.seed = seed;
    opt.writer.stripe_rows = stripe_rows;
    opt.writer.codec = codec == "deflate" ? dsi::Codec::Deflate : dsi::Codec::Identity;
    opt.writer.seed = seed;
    if (order == "random") {
      opt.writer.order = dsi::OrderPolicy::Random;
    } else if (order == "popularity") {
      opt.writer.order = dsi::OrderPolicy::Popularity;
      auto schema = profile.schema();
      auto rank = dsi::popularity_rank(schema, seed);
      std::mt19937_64 rng(seed + 1);
      size_t k = std::max<size_t>(1, static_cast<size_t>(profile.projection_fraction * profile.total_features()));
      std::vector<std::pair<uint64_t, dsi::FeatureProjection>> log;
      for (uint32_t i = 0; i < history; ++i)
        log.emplace_back(i, dsi::sample_projection(rank, profile.zipf_exponent, k, rng));
      std::vector<dsi::FeatureId> universe;
      for (const auto& f : schema.features()) universe.push_back(f.id);
      opt.writer.weights = dsi::reorder_weights(log, history, universe);
    }
    auto meta = dsi::gen_dataset(profile, opt, out);
    std::cout << "wrote " << meta.total_rows() << " rows, " << profile.total_features() << " features, "
              << meta.partitions.size() << " partition(s) to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "dsigen: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
