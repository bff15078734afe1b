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

#include "dsi/io_planner.h"

#include <sstream>

namespace dsi {

uint64_t PlannedIo::over_read() const {
  uint64_t used = 0;
  for (const auto& s : streams) used += s.length;
  return length - used;
}

size_t ReadPlan::stream_count() const {
  size_t n = 0;
  for (const auto& io : ios) n += io.streams.size();
  return n;
}

std::string ReadPlan::to_tsv() const {
  std::ostringstream os;
  os << "offset\tlength\tover_read\n";
  for (const auto& io : ios) os << io.offset << '\t' << io.length << '\t' << io.over_read() << '\n';
  return os.str();
}

void StorageModel::check() const {
  if (!(seek_seconds > 0 && bandwidth_bytes_per_second > 0 && max_io_bytes > 0))
    throw Error("storage model parameters must be positive");
}

namespace {

void check_range(const std::vector<StripeFooter>& stripes, uint32_t first, uint32_t last) {
  if (first > last || last >= stripes.size()) throw Error("stripe range out of bounds");
}

void finish(ReadPlan& plan) {
  plan.requested_bytes = 0;
  plan.fetched_bytes = 0;
  for (const auto& io : plan.ios) {
    plan.fetched_bytes += io.length;
    for (const auto& s : io.streams) plan.requested_bytes += s.length;
  }
}

}  // namespace

ReadPlan plan_per_stream(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                         uint32_t last_stripe, const FeatureProjection& projection) {
  check_range(stripes, first_stripe, last_stripe);
  ReadPlan plan;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s)
    for (const auto& d : projected_streams(footer, stripes[s], projection))
      plan.ios.push_back({d.offset, d.length, {d}});
  finish(plan);
  return plan;
}

ReadPlan plan_coalesced(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                        uint32_t last_stripe, const FeatureProjection& projection, uint64_t window) {
  if (window == 0) throw Error("coalescing window must be positive");
  check_range(stripes, first_stripe, last_stripe);
  ReadPlan plan;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s) {
    PlannedIo cur;
    bool open = false;
    for (const auto& d : projected_streams(footer, stripes[s], projection)) {
      if (open && d.end() - cur.offset <= window) {
        cur.length = d.end() - cur.offset;
        cur.streams.push_back(d);
        continue;
      }
      if (open) plan.ios.push_back(std::move(cur));
      cur = PlannedIo{d.offset, d.length, {d}};
      open = true;
    }
    if (open) plan.ios.push_back(std::move(cur));
  }
  finish(plan);
  return plan;
}

ReadPlan plan_whole_stripes(const FileFooter& footer, const std::vector<StripeFooter>& stripes,
                            uint32_t first_stripe, uint32_t last_stripe, const FeatureProjection& projection) {
  check_range(stripes, first_stripe, last_stripe);
  ReadPlan plan;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s) {
    const auto& info = footer.stripes[s];
    plan.ios.push_back({info.offset, info.data_length, projected_streams(footer, stripes[s], projection)});
  }
  finish(plan);
  return plan;
}

ReadPlan plan_chunked(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                      uint32_t last_stripe, const FeatureProjection& projection, uint64_t chunk_bytes) {
  if (chunk_bytes == 0) throw Error("chunk size must be positive");
  check_range(stripes, first_stripe, last_stripe);
  const uint64_t begin = footer.stripes[first_stripe].offset;
  const uint64_t end = footer.stripes[last_stripe].offset + footer.stripes[last_stripe].data_length;
  ReadPlan plan;
  for (uint64_t off = begin; off < end; off += chunk_bytes)
    plan.ios.push_back({off, std::min(chunk_bytes, end - off), {}});
  // Streams are filed under the chunk holding their first byte; a stream may
  // straddle chunks, so these plans are for cost simulation only.
  size_t io = 0;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s) {
    for (const auto& d : projected_streams(footer, stripes[s], projection)) {
      while (d.offset >= plan.ios[io].end()) ++io;
      plan.ios[io].streams.push_back(d);
    }
  }
  plan.fetched_bytes = end - begin;
  plan.requested_bytes = 0;
  for (const auto& i : plan.ios)
    for (const auto& d : i.streams) plan.requested_bytes += d.length;
  return plan;
}

SimulatedRead simulate_throughput(const ReadPlan& plan, const StorageModel& model) {
  model.check();
  if (plan.ios.empty()) throw Error("cannot simulate an empty plan");
  SimulatedRead r;
  for (const auto& io : plan.ios) {
    uint64_t pieces = io.length == 0 ? 1 : (io.length + model.max_io_bytes - 1) / model.max_io_bytes;
    r.physical_ios += pieces;
    r.seconds += static_cast<double>(pieces) * model.seek_seconds +
                 static_cast<double>(io.length) / model.bandwidth_bytes_per_second;
  }
  r.effective_bytes_per_second = static_cast<double>(plan.requested_bytes) / r.seconds;
  return r;
}

}  // namespace dsi
