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
#include <sstream>

#include <CLI11.hpp>

#include "dsi/columnar.h"
#include "dsi/dataset.h"
#include "dsi/io_planner.h"
#include "log.h"

namespace {

std::vector<dsi::FeatureId> parse_ids(const std::string& s) {
  std::vector<dsi::FeatureId> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(static_cast<dsi::FeatureId>(std::stoul(tok)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  dsi::tools::init_logging();
  CLI::App app{"Plan the reads for a projection over one MDSI file and simulate their cost"};
  std::string file, features, planner = "coalesced";
  uint64_t window = dsi::kDefaultCoalesceWindow, chunk = 8u << 20;
  double seek_ms = 8.0, bw_mbps = 180.0;
  uint64_t max_io = 8u << 20;
  uint32_t zipf_k = 0, first = 0, last = UINT32_MAX;
  uint64_t seed = 1;
  bool summary_only = false;
  app.add_option("--file", file, "MDSI file")->required()->check(CLI::ExistingFile);
  app.add_option("--features", features, "comma-separated feature ids");
  app.add_option("--zipf-k", zipf_k, "sample a Zipf(1.2) projection of this many features instead");
  app.add_option("--seed", seed, "seed for --zipf-k");
  app.add_option("--planner", planner)->check(CLI::IsMember({"per-stream", "coalesced", "whole-stripe", "chunked"}));
  app.add_option("--window-bytes", window, "coalescing window");
  app.add_option("--chunk-bytes", chunk, "chunk size for the chunked planner");
  app.add_option("--seek-ms", seek_ms, "seek cost per physical IO");
  app.add_option("--bw-mbps", bw_mbps, "sequential bandwidth, MB/s");
  app.add_option("--max-io-bytes", max_io, "largest physical IO");
  app.add_option("--first-stripe", first);
  app.add_option("--last-stripe", last);
  app.add_flag("--summary", summary_only, "print only the summary line");
  CLI11_PARSE(app, argc, argv);

  try {
    auto reader = dsi::TableReader::open(file);
    const auto& footer = reader.footer();
    dsi::FeatureProjection proj;
    if (zipf_k > 0) {
      auto rank = dsi::popularity_rank(footer.schema, seed);
      std::mt19937_64 rng(seed + 2);
      proj = dsi::sample_projection(rank, 1.2, zipf_k, rng);
    } else {
      proj = dsi::FeatureProjection(parse_ids(features));
    }
    if (reader.stripes().empty()) throw dsi::Error("file has no stripes");
    last = std::min<uint32_t>(last, static_cast<uint32_t>(reader.stripes().size() - 1));
    dsi::ReadPlan plan;
    if (planner == "per-stream") plan = dsi::plan_per_stream(footer, reader.stripes(), first, last, proj);
    else if (planner == "coalesced") plan = dsi::plan_coalesced(footer, reader.stripes(), first, last, proj, window);
    else if (planner == "whole-stripe") plan = dsi::plan_whole_stripes(footer, reader.stripes(), first, last, proj);
    else plan = dsi::plan_chunked(footer, reader.stripes(), first, last, proj, chunk);
    dsi::StorageModel model{seek_ms / 1000.0, bw_mbps * 1e6, max_io};
    auto sim = dsi::simulate_throughput(plan, model);
    if (!summary_only) std::cout << plan.to_tsv();
    std::cout << "# planner=" << planner << " features=" << proj.size() << " ios=" << plan.ios.size()
              << " physical_ios=" << sim.physical_ios << " requested=" << plan.requested_bytes
              << " fetched=" << plan.fetched_bytes << " over_read=" << plan.over_read()
              << " seconds=" << sim.seconds << " throughput_MBps=" << sim.effective_bytes_per_second / 1e6 << "\n";
  } catch (const std::exception& e) {
    std::cerr << "dsiplan: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
