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

// Flattened columnar table files ("MDSI"). Each feature of a stripe is
// stored as its own set of streams so that readers can fetch only the
// projected features. Byte layout is documented in docs/format.md.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsi/model.h"
#include "dsi/row_group.h"

namespace dsi {

constexpr uint16_t kFormatVersion = 1;
constexpr char kMagic[4] = {'M', 'D', 'S', 'I'};
/// Feature id under which the per-stripe label stream is filed.
constexpr FeatureId kLabelFeature = 0xFFFFFFFFu;

enum class StreamKind : uint8_t { Values = 0, Lengths = 1, Presence = 2, Scores = 3, Labels = 4 };
enum class Codec : uint8_t { Identity = 0, Deflate = 1 };

const char* stream_kind_name(StreamKind k);

struct StreamDescriptor {
  FeatureId feature = 0;
  StreamKind kind = StreamKind::Values;
  uint64_t offset = 0;
  uint64_t length = 0;      // on-disk (compressed) bytes
  uint64_t raw_length = 0;  // decoded bytes
  Codec codec = Codec::Identity;
  uint64_t checksum = 0;    // FNV-1a-64 of the on-disk bytes

  uint64_t end() const { return offset + length; }
  bool operator==(const StreamDescriptor&) const = default;
};

struct StripeFooter {
  uint32_t rows = 0;
  /// Physical order; equals byte order on disk.
  std::vector<StreamDescriptor> streams;
  /// Features with no covered row in this stripe (no streams written).
  std::vector<FeatureId> absent;

  bool operator==(const StripeFooter&) const = default;
};

struct StripeInfo {
  uint64_t offset = 0;       // first byte of stream data
  uint64_t data_length = 0;  // bytes of stream data
  uint64_t footer_offset = 0;
  uint32_t footer_length = 0;
  uint32_t rows = 0;
  uint64_t footer_checksum = 0;

  bool operator==(const StripeInfo&) const = default;
};

struct FeatureWeight {
  FeatureId feature = 0;
  double weight = 0.0;
  bool operator==(const FeatureWeight&) const = default;
};

struct FileFooter {
  uint16_t version = kFormatVersion;
  TableSchema schema;
  uint64_t rows = 0;
  std::vector<StripeInfo> stripes;
  std::vector<FeatureId> layout;
  std::vector<FeatureWeight> popularity;

  /// First file-local row of each stripe, plus a final entry equal to rows.
  std::vector<uint64_t> stripe_row_starts() const;
};

enum class OrderPolicy : uint8_t { SchemaOrder, Random, Popularity };

struct WriterConfig {
  uint32_t stripe_rows = 4096;
  uint64_t coalesce_hint_bytes = 1310720;
  Codec codec = Codec::Identity;
  OrderPolicy order = OrderPolicy::SchemaOrder;
  uint64_t seed = 0;                  // Random
  std::vector<FeatureWeight> weights;  // Popularity
};

/// Physical feature order for a schema under cfg's order policy.
/// Popularity sorts by weight descending, then ascending id; features
/// without a weight count as 0.
std::vector<FeatureId> layout_order(const TableSchema& schema, const WriterConfig& cfg);

/// weight(f) = number of sessions among the last `window` entries of the
/// log whose projection contains f. Sorted weight-descending, id-ascending.
/// Features in `universe` that never occur are reported with weight 0.
std::vector<FeatureWeight> reorder_weights(const std::vector<std::pair<uint64_t, FeatureProjection>>& log,
                                           size_t window, const std::vector<FeatureId>& universe = {});

class ByteSink {
 public:
  virtual ~ByteSink() = default;
  virtual void write(std::span<const uint8_t> data) = 0;
  virtual uint64_t position() const = 0;
};

class MemorySink : public ByteSink {
 public:
  void write(std::span<const uint8_t> data) override { buf_.insert(buf_.end(), data.begin(), data.end()); }
  uint64_t position() const override { return buf_.size(); }
  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class FileSink : public ByteSink {
 public:
  explicit FileSink(const std::string& path);
  ~FileSink() override;
  FileSink(const FileSink&) = delete;
  FileSink& operator=(const FileSink&) = delete;

  void write(std::span<const uint8_t> data) override;
  uint64_t position() const override { return pos_; }
  void close();

 private:
  std::string path_;
  int fd_ = -1;
  uint64_t pos_ = 0;
};

/// Streaming writer. Samples are buffered per feature and flushed as a
/// stripe every cfg.stripe_rows rows.
class TableWriter {
 public:
  TableWriter(TableSchema schema, WriterConfig cfg, ByteSink& sink);
  ~TableWriter();
  TableWriter(const TableWriter&) = delete;
  TableWriter& operator=(const TableWriter&) = delete;

  /// Throws SchemaError (with the row index) for a nonconforming sample and
  /// IoError("partial file") if the sink fails.
  void add(const Sample& sample);
  FileFooter close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

FileFooter write_table(std::span<const Sample> samples, const TableSchema& schema, const WriterConfig& cfg,
                       ByteSink& sink);

/// Random-access byte source.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual uint64_t size() const = 0;
  virtual void read(uint64_t offset, std::span<uint8_t> out) const = 0;
};

class MemorySource : public ByteSource {
 public:
  explicit MemorySource(std::vector<uint8_t> data) : data_(std::move(data)) {}
  uint64_t size() const override { return data_.size(); }
  void read(uint64_t offset, std::span<uint8_t> out) const override;

 private:
  std::vector<uint8_t> data_;
};

class FileSource : public ByteSource {
 public:
  explicit FileSource(const std::string& path);
  ~FileSource() override;
  FileSource(const FileSource&) = delete;
  FileSource& operator=(const FileSource&) = delete;

  uint64_t size() const override { return size_; }
  void read(uint64_t offset, std::span<uint8_t> out) const override;

 private:
  int fd_ = -1;
  uint64_t size_ = 0;
};

struct ReadPlan;

/// Streams a reader must fetch for one stripe: the label stream followed by
/// every stream of each projected feature, in physical order.
/// Throws SchemaError for a feature not in the schema.
std::vector<StreamDescriptor> projected_streams(const FileFooter& footer, const StripeFooter& stripe,
                                                const FeatureProjection& projection);

/// Reader over a sealed file. Immutable after open; safe for concurrent reads.
class TableReader {
 public:
  /// Validates magic, version and footer checksums.
  explicit TableReader(std::shared_ptr<const ByteSource> source);
  static TableReader open(const std::string& path);

  const FileFooter& footer() const { return footer_; }
  const std::vector<StripeFooter>& stripes() const { return stripe_footers_; }
  uint64_t rows() const { return footer_.rows; }

  /// Row-major decode of stripes [first, last] restricted to projection.
  std::vector<Sample> read_rows(uint32_t first_stripe, uint32_t last_stripe, const FeatureProjection& projection,
                                const ReadPlan& plan) const;

  /// Columnar decode of the same data straight into a flatmap.
  InMemoryRowGroup read_row_group(uint32_t first_stripe, uint32_t last_stripe, const FeatureProjection& projection,
                                  const ReadPlan& plan) const;

  /// Total bytes and I/Os issued through this reader so far.
  uint64_t bytes_fetched() const;
  uint64_t ios_issued() const;

 private:
  struct Fetched;
  Fetched fetch(uint32_t first_stripe, uint32_t last_stripe, const FeatureProjection& projection,
                const ReadPlan& plan) const;

  std::shared_ptr<const ByteSource> source_;
  FileFooter footer_;
  std::vector<StripeFooter> stripe_footers_;
  std::vector<uint64_t> stripe_row_starts_;
  struct Counters;
  std::shared_ptr<Counters> counters_;
};

/// Serialization helpers, exposed for tests and tools.
std::vector<uint8_t> encode_stripe_footer(const StripeFooter& f);
StripeFooter decode_stripe_footer(std::span<const uint8_t> bytes);
std::vector<uint8_t> encode_file_footer(const FileFooter& f);
FileFooter decode_file_footer(std::span<const uint8_t> bytes);

}  // namespace dsi
