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

// Physical read planning over flattened files and an analytic HDD cost model.

#include <cstdint>
#include <string>
#include <vector>

#include "dsi/columnar.h"

namespace dsi {

struct PlannedIo {
  uint64_t offset = 0;
  uint64_t length = 0;
  std::vector<StreamDescriptor> streams;  // projected streams inside [offset, offset+length)

  uint64_t end() const { return offset + length; }
  /// Bytes inside the I/O that belong to no projected stream.
  uint64_t over_read() const;
};

/// Ordered, nonoverlapping I/Os covering every projected stream exactly once.
struct ReadPlan {
  std::vector<PlannedIo> ios;
  uint64_t requested_bytes = 0;
  uint64_t fetched_bytes = 0;

  uint64_t over_read() const { return fetched_bytes - requested_bytes; }
  size_t stream_count() const;
  std::string to_tsv() const;
};

/// Default coalescing window: 1.25 MiB.
constexpr uint64_t kDefaultCoalesceWindow = 1310720;

struct StorageModel {
  double seek_seconds = 8e-3;
  double bandwidth_bytes_per_second = 180e6;
  uint64_t max_io_bytes = 8ull << 20;

  void check() const;
};

/// One I/O per projected stream descriptor.
ReadPlan plan_per_stream(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                         uint32_t last_stripe, const FeatureProjection& projection);

/// Greedy left-to-right merge of projected streams within each stripe while
/// the merged span stays within `window` bytes. Never merges across stripes.
ReadPlan plan_coalesced(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                        uint32_t last_stripe, const FeatureProjection& projection, uint64_t window);

/// Unflattened baseline: one I/O per stripe spanning all of its stream data.
/// requested_bytes still counts only the projected streams.
ReadPlan plan_whole_stripes(const FileFooter& footer, const std::vector<StripeFooter>& stripes,
                            uint32_t first_stripe, uint32_t last_stripe, const FeatureProjection& projection);

/// Reads the stripes' stream data as one contiguous region cut into
/// fixed-size chunks (the storage layer's chunk size).
ReadPlan plan_chunked(const FileFooter& footer, const std::vector<StripeFooter>& stripes, uint32_t first_stripe,
                      uint32_t last_stripe, const FeatureProjection& projection, uint64_t chunk_bytes);

struct SimulatedRead {
  double seconds = 0.0;
  double effective_bytes_per_second = 0.0;  // requested bytes / seconds
  uint64_t physical_ios = 0;                // after splitting at max_io_bytes
};

/// Sum over I/Os of seek + length / bandwidth; I/Os longer than
/// model.max_io_bytes are split first. Throws Error for an empty plan.
SimulatedRead simulate_throughput(const ReadPlan& plan, const StorageModel& model);

}  // namespace dsi
