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

#include "dsi/columnar.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>
#include <random>
#include <unordered_map>

#include "dsi/bytes.h"
#include "dsi/io_planner.h"

namespace dsi {

const char* stream_kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::Values: return "values";
    case StreamKind::Lengths: return "lengths";
    case StreamKind::Presence: return "presence";
    case StreamKind::Scores: return "scores";
    case StreamKind::Labels: return "labels";
  }
  return "?";
}

std::vector<uint64_t> FileFooter::stripe_row_starts() const {
  std::vector<uint64_t> starts;
  starts.reserve(stripes.size() + 1);
  uint64_t r = 0;
  for (const auto& s : stripes) {
    starts.push_back(r);
    r += s.rows;
  }
  starts.push_back(r);
  return starts;
}

std::vector<FeatureId> layout_order(const TableSchema& schema, const WriterConfig& cfg) {
  std::vector<FeatureId> ids;
  ids.reserve(schema.features().size());
  for (const auto& f : schema.features()) ids.push_back(f.id);
  switch (cfg.order) {
    case OrderPolicy::SchemaOrder:
      break;
    case OrderPolicy::Random: {
      // Explicit Fisher-Yates so layouts do not depend on the stdlib's shuffle.
      std::mt19937_64 rng(cfg.seed);
      for (size_t i = ids.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng() % i);
        std::swap(ids[i - 1], ids[j]);
      }
      break;
    }
    case OrderPolicy::Popularity: {
      std::unordered_map<FeatureId, double> w;
      for (const auto& fw : cfg.weights) w[fw.feature] = fw.weight;
      auto weight = [&](FeatureId f) {
        auto it = w.find(f);
        return it == w.end() ? 0.0 : it->second;
      };
      std::sort(ids.begin(), ids.end(), [&](FeatureId a, FeatureId b) {
        double wa = weight(a), wb = weight(b);
        return wa != wb ? wa > wb : a < b;
      });
      break;
    }
  }
  return ids;
}

std::vector<FeatureWeight> reorder_weights(const std::vector<std::pair<uint64_t, FeatureProjection>>& log,
                                           size_t window, const std::vector<FeatureId>& universe) {
  std::unordered_map<FeatureId, double> counts;
  for (FeatureId f : universe) counts.emplace(f, 0.0);
  size_t start = log.size() > window ? log.size() - window : 0;
  for (size_t i = start; i < log.size(); ++i)
    for (FeatureId f : log[i].second.ids()) counts[f] += 1.0;
  std::vector<FeatureWeight> out;
  out.reserve(counts.size());
  for (auto [f, c] : counts) out.push_back({f, c});
  std::sort(out.begin(), out.end(), [](const FeatureWeight& a, const FeatureWeight& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.feature < b.feature;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Footer encoding

namespace {

void put_descriptor(ByteWriter& w, const StreamDescriptor& d) {
  w.u32(d.feature);
  w.u8(static_cast<uint8_t>(d.kind));
  w.u64(d.offset);
  w.u64(d.length);
  w.u64(d.raw_length);
  w.u8(static_cast<uint8_t>(d.codec));
  w.u64(d.checksum);
}

StreamDescriptor get_descriptor(ByteReader& r) {
  StreamDescriptor d;
  d.feature = r.u32();
  uint8_t kind = r.u8();
  if (kind > static_cast<uint8_t>(StreamKind::Labels)) throw FormatError("bad stream kind");
  d.kind = static_cast<StreamKind>(kind);
  d.offset = r.u64();
  d.length = r.u64();
  d.raw_length = r.u64();
  uint8_t codec = r.u8();
  if (codec > static_cast<uint8_t>(Codec::Deflate)) throw FormatError("bad codec");
  d.codec = static_cast<Codec>(codec);
  d.checksum = r.u64();
  return d;
}

uint64_t checksum(std::span<const uint8_t> b) { return fnv1a64(b); }

}  // namespace

std::vector<uint8_t> encode_stripe_footer(const StripeFooter& f) {
  ByteWriter w;
  w.u32(f.rows);
  w.varint(f.streams.size());
  for (const auto& d : f.streams) put_descriptor(w, d);
  w.varint(f.absent.size());
  for (FeatureId a : f.absent) w.u32(a);
  return w.take();
}

StripeFooter decode_stripe_footer(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  StripeFooter f;
  f.rows = r.u32();
  uint64_t n = r.varint();
  if (n > r.remaining()) throw FormatError("stripe footer: stream count exceeds size");
  f.streams.reserve(n);
  for (uint64_t i = 0; i < n; ++i) f.streams.push_back(get_descriptor(r));
  uint64_t na = r.varint();
  if (na > r.remaining()) throw FormatError("stripe footer: absent count exceeds size");
  for (uint64_t i = 0; i < na; ++i) f.absent.push_back(r.u32());
  if (!r.done()) throw FormatError("stripe footer: trailing bytes");
  return f;
}

std::vector<uint8_t> encode_file_footer(const FileFooter& f) {
  ByteWriter w;
  w.u16(f.version);
  w.str(f.schema.table());
  w.str(f.schema.partition());
  w.varint(f.schema.features().size());
  for (const auto& fs : f.schema.features()) {
    w.u32(fs.id);
    w.u8(static_cast<uint8_t>(fs.kind));
    w.f64(fs.coverage);
    w.f64(fs.mean_length);
  }
  w.u64(f.rows);
  w.varint(f.stripes.size());
  for (const auto& s : f.stripes) {
    w.u64(s.offset);
    w.u64(s.data_length);
    w.u64(s.footer_offset);
    w.u32(s.footer_length);
    w.u32(s.rows);
    w.u64(s.footer_checksum);
  }
  w.varint(f.layout.size());
  for (FeatureId id : f.layout) w.u32(id);
  w.varint(f.popularity.size());
  for (const auto& p : f.popularity) {
    w.u32(p.feature);
    w.f64(p.weight);
  }
  w.u64(checksum(w.buf()));
  return w.take();
}

FileFooter decode_file_footer(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("file footer too short");
  auto body = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.last(8));
  if (tail.u64() != checksum(body)) throw ChecksumError("file footer checksum mismatch");
  ByteReader r(body);
  FileFooter f;
  f.version = r.u16();
  if (f.version != kFormatVersion) throw FormatError("unsupported footer version");
  std::string table = r.str();
  std::string partition = r.str();
  uint64_t nf = r.varint();
  if (nf > r.remaining()) throw FormatError("file footer: feature count exceeds size");
  std::vector<FeatureSpec> features;
  features.reserve(nf);
  for (uint64_t i = 0; i < nf; ++i) {
    FeatureSpec fs;
    fs.id = r.u32();
    uint8_t k = r.u8();
    if (k > 2) throw FormatError("bad feature kind");
    fs.kind = static_cast<FeatureKind>(k);
    fs.coverage = r.f64();
    fs.mean_length = r.f64();
    features.push_back(fs);
  }
  try {
    f.schema = TableSchema(std::move(table), std::move(partition), std::move(features));
  } catch (const SchemaError& e) {
    throw FormatError(std::string("file footer schema: ") + e.what());
  }
  f.rows = r.u64();
  uint64_t ns = r.varint();
  if (ns > r.remaining()) throw FormatError("file footer: stripe count exceeds size");
  for (uint64_t i = 0; i < ns; ++i) {
    StripeInfo s;
    s.offset = r.u64();
    s.data_length = r.u64();
    s.footer_offset = r.u64();
    s.footer_length = r.u32();
    s.rows = r.u32();
    s.footer_checksum = r.u64();
    f.stripes.push_back(s);
  }
  uint64_t nl = r.varint();
  if (nl > r.remaining()) throw FormatError("file footer: layout count exceeds size");
  for (uint64_t i = 0; i < nl; ++i) f.layout.push_back(r.u32());
  uint64_t np = r.varint();
  if (np > r.remaining()) throw FormatError("file footer: popularity count exceeds size");
  for (uint64_t i = 0; i < np; ++i) {
    FeatureWeight p;
    p.feature = r.u32();
    p.weight = r.f64();
    f.popularity.push_back(p);
  }
  if (!r.done()) throw FormatError("file footer: trailing bytes");
  return f;
}

// ---------------------------------------------------------------------------
// Sinks and sources

FileSink::FileSink(const std::string& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd_ < 0) throw IoError("cannot create " + path + ": " + std::strerror(errno));
}

FileSink::~FileSink() {
  if (fd_ >= 0) ::close(fd_);
}

void FileSink::write(std::span<const uint8_t> data) {
  if (fd_ < 0) throw IoError("write to closed sink " + path_);
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + path_ + ": " + std::strerror(errno));
    }
    done += static_cast<size_t>(n);
  }
  pos_ += data.size();
}

void FileSink::close() {
  if (fd_ >= 0 && ::close(fd_) != 0) {
    fd_ = -1;
    throw IoError("close " + path_ + ": " + std::strerror(errno));
  }
  fd_ = -1;
}

void MemorySource::read(uint64_t offset, std::span<uint8_t> out) const {
  if (offset > data_.size() || out.size() > data_.size() - offset) throw FormatError("read past end of file");
  std::memcpy(out.data(), data_.data() + offset, out.size());
}

FileSource::FileSource(const std::string& path) {
  fd_ = ::open(path.c_str(), O_RDONLY);
  if (fd_ < 0) throw IoError("cannot open " + path + ": " + std::strerror(errno));
  struct stat st {};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    throw IoError("cannot stat " + path);
  }
  size_ = static_cast<uint64_t>(st.st_size);
}

FileSource::~FileSource() {
  if (fd_ >= 0) ::close(fd_);
}

void FileSource::read(uint64_t offset, std::span<uint8_t> out) const {
  if (offset > size_ || out.size() > size_ - offset) throw FormatError("read past end of file");
  size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("pread: ") + std::strerror(errno));
    }
    if (n == 0) throw FormatError("short read");
    done += static_cast<size_t>(n);
  }
}

// ---------------------------------------------------------------------------
// Writer

namespace {

std::vector<uint8_t> deflate_bytes(std::span<const uint8_t> raw) {
  uLongf bound = compressBound(raw.size());
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), raw.size(), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw Error("deflate failed");
  out.resize(bound);
  return out;
}

std::vector<uint8_t> inflate_bytes(std::span<const uint8_t> comp, uint64_t raw_length) {
  std::vector<uint8_t> out(raw_length);
  uLongf len = raw_length;
  int rc = uncompress(out.data(), &len, comp.data(), comp.size());
  if (rc != Z_OK || len != raw_length) throw FormatError("inflate failed");
  return out;
}

struct FeatureBuffer {
  std::vector<uint8_t> presence;
  ByteWriter lengths;
  ByteWriter values;
  ByteWriter scores;
  uint32_t covered = 0;

  void reset(size_t bitmap_bytes) {
    presence.assign(bitmap_bytes, 0);
    lengths.buf().clear();
    values.buf().clear();
    scores.buf().clear();
    covered = 0;
  }
};

}  // namespace

struct TableWriter::Impl {
  TableSchema schema;
  WriterConfig cfg;
  ByteSink& sink;
  std::vector<size_t> layout;  // schema indices in physical order
  std::vector<FeatureBuffer> buffers;
  ByteWriter labels;
  uint32_t stripe_rows = 0;
  uint64_t total_rows = 0;
  std::vector<StripeInfo> stripes;
  std::vector<std::vector<uint8_t>> stripe_footers;
  bool closed = false;

  Impl(TableSchema s, WriterConfig c, ByteSink& k) : schema(std::move(s)), cfg(std::move(c)), sink(k) {
    if (cfg.stripe_rows == 0) throw SchemaError("stripe rows must be positive");
    for (FeatureId id : layout_order(schema, cfg)) layout.push_back(static_cast<size_t>(schema.index_of(id)));
    buffers.resize(schema.features().size());
    for (auto& b : buffers) b.reset(bitmap_bytes());
    ByteWriter header;
    header.bytes({reinterpret_cast<const uint8_t*>(kMagic), 4});
    header.u16(kFormatVersion);
    put(header.buf());
  }

  size_t bitmap_bytes() const { return (cfg.stripe_rows + 7) / 8; }

  void put(std::span<const uint8_t> data) {
    try {
      sink.write(data);
    } catch (const std::exception& e) {
      closed = true;
      throw IoError(std::string("partial file: ") + e.what());
    }
  }

  void emit(StripeFooter& footer, FeatureId feature, StreamKind kind, std::span<const uint8_t> raw) {
    StreamDescriptor d;
    d.feature = feature;
    d.kind = kind;
    d.offset = sink.position();
    d.raw_length = raw.size();
    d.codec = cfg.codec;
    if (cfg.codec == Codec::Deflate) {
      auto comp = deflate_bytes(raw);
      d.length = comp.size();
      d.checksum = checksum(comp);
      put(comp);
    } else {
      d.length = raw.size();
      d.checksum = checksum(raw);
      put(raw);
    }
    footer.streams.push_back(d);
  }

  void add(const Sample& s) {
    if (closed) throw Error("writer is closed");
    try {
      schema.check_sample(s);
    } catch (const SchemaError& e) {
      throw SchemaError("row " + std::to_string(total_rows) + ": " + e.what());
    }
    const uint32_t row = stripe_rows;
    auto mark = [&](FeatureId id) -> FeatureBuffer& {
      auto& b = buffers[static_cast<size_t>(schema.index_of(id))];
      b.presence[row >> 3] |= static_cast<uint8_t>(1u << (row & 7));
      ++b.covered;
      return b;
    };
    for (const auto& [id, v] : s.dense) mark(id).values.f64(v);
    for (const auto& [id, list] : s.sparse) {
      auto& b = mark(id);
      b.lengths.varint(list.size());
      for (int64_t x : list) b.values.svarint(x);
    }
    for (const auto& [id, list] : s.scored) {
      auto& b = mark(id);
      b.lengths.varint(list.size());
      for (const auto& x : list) {
        b.values.svarint(x.id);
        b.scores.f32(x.score);
      }
    }
    labels.f32(s.label);
    ++stripe_rows;
    ++total_rows;
    if (stripe_rows == cfg.stripe_rows) flush();
  }

  void flush() {
    if (stripe_rows == 0) return;
    StripeFooter footer;
    footer.rows = stripe_rows;
    StripeInfo info;
    info.offset = sink.position();
    info.rows = stripe_rows;
    emit(footer, kLabelFeature, StreamKind::Labels, labels.buf());
    const size_t used_bitmap = (stripe_rows + 7) / 8;
    for (size_t idx : layout) {
      const auto& spec = schema.features()[idx];
      auto& b = buffers[idx];
      if (b.covered == 0) {
        footer.absent.push_back(spec.id);
        continue;
      }
      emit(footer, spec.id, StreamKind::Presence, std::span<const uint8_t>(b.presence).first(used_bitmap));
      if (spec.kind != FeatureKind::Dense) emit(footer, spec.id, StreamKind::Lengths, b.lengths.buf());
      emit(footer, spec.id, StreamKind::Values, b.values.buf());
      if (spec.kind == FeatureKind::ScoredSparse) emit(footer, spec.id, StreamKind::Scores, b.scores.buf());
    }
    info.data_length = sink.position() - info.offset;
    stripes.push_back(info);
    stripe_footers.push_back(encode_stripe_footer(footer));
    for (auto& b : buffers) b.reset(bitmap_bytes());
    labels.buf().clear();
    stripe_rows = 0;
  }

  FileFooter close() {
    if (closed) throw Error("writer is closed");
    flush();
    for (size_t i = 0; i < stripes.size(); ++i) {
      stripes[i].footer_offset = sink.position();
      stripes[i].footer_length = static_cast<uint32_t>(stripe_footers[i].size());
      stripes[i].footer_checksum = checksum(stripe_footers[i]);
      put(stripe_footers[i]);
    }
    FileFooter f;
    f.schema = schema;
    f.rows = total_rows;
    f.stripes = stripes;
    for (size_t idx : layout) f.layout.push_back(schema.features()[idx].id);
    if (cfg.order == OrderPolicy::Popularity) {
      f.popularity = cfg.weights;
      std::sort(f.popularity.begin(), f.popularity.end(), [](const FeatureWeight& a, const FeatureWeight& b) {
        return a.weight != b.weight ? a.weight > b.weight : a.feature < b.feature;
      });
    }
    auto bytes = encode_file_footer(f);
    put(bytes);
    ByteWriter tail;
    tail.u32(static_cast<uint32_t>(bytes.size()));
    tail.bytes({reinterpret_cast<const uint8_t*>(kMagic), 4});
    put(tail.buf());
    closed = true;
    return f;
  }
};

TableWriter::TableWriter(TableSchema schema, WriterConfig cfg, ByteSink& sink)
    : impl_(std::make_unique<Impl>(std::move(schema), std::move(cfg), sink)) {}

TableWriter::~TableWriter() = default;

void TableWriter::add(const Sample& sample) { impl_->add(sample); }

FileFooter TableWriter::close() { return impl_->close(); }

FileFooter write_table(std::span<const Sample> samples, const TableSchema& schema, const WriterConfig& cfg,
                       ByteSink& sink) {
  TableWriter w(schema, cfg, sink);
  for (const auto& s : samples) w.add(s);
  return w.close();
}

// ---------------------------------------------------------------------------
// Reader

std::vector<StreamDescriptor> projected_streams(const FileFooter& footer, const StripeFooter& stripe,
                                                const FeatureProjection& projection) {
  for (FeatureId f : projection.ids())
    if (!footer.schema.contains(f)) throw SchemaError("projected feature " + std::to_string(f) + " not in schema");
  std::vector<StreamDescriptor> out;
  for (const auto& d : stripe.streams)
    if (d.feature == kLabelFeature || projection.contains(d.feature)) out.push_back(d);
  return out;
}

struct TableReader::Counters {
  std::atomic<uint64_t> bytes{0};
  std::atomic<uint64_t> ios{0};
};

TableReader TableReader::open(const std::string& path) {
  return TableReader(std::make_shared<FileSource>(path));
}

TableReader::TableReader(std::shared_ptr<const ByteSource> source)
    : source_(std::move(source)), counters_(std::make_shared<Counters>()) {
  const uint64_t size = source_->size();
  constexpr uint64_t kHeader = 6, kTail = 8;
  if (size < kHeader + kTail) throw FormatError("file too short");
  uint8_t head[kHeader];
  source_->read(0, head);
  if (std::memcmp(head, kMagic, 4) != 0) throw FormatError("bad header magic");
  if ((head[4] | (head[5] << 8)) != kFormatVersion) throw FormatError("unsupported version");
  uint8_t tail[kTail];
  source_->read(size - kTail, tail);
  if (std::memcmp(tail + 4, kMagic, 4) != 0) throw FormatError("bad trailing magic");
  uint64_t footer_len = ByteReader(tail).u32();
  if (footer_len > size - kHeader - kTail) throw FormatError("footer length out of bounds");
  std::vector<uint8_t> fbytes(footer_len);
  const uint64_t footer_start = size - kTail - footer_len;
  source_->read(footer_start, fbytes);
  footer_ = decode_file_footer(fbytes);

  uint64_t sum = 0;
  uint64_t data_end = kHeader;
  for (const auto& s : footer_.stripes) {
    if (s.offset != data_end || s.data_length > footer_start - s.offset)
      throw FormatError("stripe data out of bounds");
    data_end = s.offset + s.data_length;
    sum += s.rows;
  }
  if (sum != footer_.rows) throw FormatError("stripe row counts do not sum to file rows");
  {
    std::vector<FeatureId> a = footer_.layout, b;
    for (const auto& f : footer_.schema.features()) b.push_back(f.id);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw FormatError("layout is not a permutation of the schema");
  }
  stripe_footers_.reserve(footer_.stripes.size());
  for (const auto& s : footer_.stripes) {
    if (s.footer_offset < data_end || s.footer_length > footer_start - s.footer_offset)
      throw FormatError("stripe footer out of bounds");
    std::vector<uint8_t> b(s.footer_length);
    source_->read(s.footer_offset, b);
    if (checksum(b) != s.footer_checksum) throw ChecksumError("stripe footer checksum mismatch");
    auto sf = decode_stripe_footer(b);
    if (sf.rows != s.rows) throw FormatError("stripe footer row count mismatch");
    uint64_t pos = s.offset;
    for (const auto& d : sf.streams) {
      if (d.offset != pos || d.length > s.offset + s.data_length - d.offset)
        throw FormatError("stream descriptor out of bounds");
      pos = d.end();
    }
    if (pos != s.offset + s.data_length) throw FormatError("stripe streams do not tile stripe data");
    stripe_footers_.push_back(std::move(sf));
  }
  stripe_row_starts_ = footer_.stripe_row_starts();
}

uint64_t TableReader::bytes_fetched() const { return counters_->bytes.load(); }
uint64_t TableReader::ios_issued() const { return counters_->ios.load(); }

struct TableReader::Fetched {
  struct Stream {
    StreamDescriptor desc;
    std::vector<uint8_t> raw;
  };
  // Per stripe in range: decoded streams keyed by (feature, kind).
  std::vector<std::map<std::pair<FeatureId, StreamKind>, Stream>> stripes;

  const std::vector<uint8_t>* get(size_t stripe, FeatureId f, StreamKind k) const {
    auto& m = stripes[stripe];
    auto it = m.find({f, k});
    return it == m.end() ? nullptr : &it->second.raw;
  }
};

TableReader::Fetched TableReader::fetch(uint32_t first_stripe, uint32_t last_stripe,
                                        const FeatureProjection& projection, const ReadPlan& plan) const {
  if (first_stripe > last_stripe || last_stripe >= stripe_footers_.size()) throw Error("stripe range out of bounds");
  for (size_t i = 1; i < plan.ios.size(); ++i)
    if (plan.ios[i].offset < plan.ios[i - 1].end()) throw Error("read plan I/Os overlap or are unsorted");

  Fetched out;
  out.stripes.resize(last_stripe - first_stripe + 1);
  // Needed streams, located in plan I/Os by offset.
  std::vector<std::pair<size_t, StreamDescriptor>> needed;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s)
    for (const auto& d : projected_streams(footer_, stripe_footers_[s], projection))
      needed.emplace_back(s - first_stripe, d);

  std::vector<int> io_of(needed.size(), -1);
  std::vector<bool> io_used(plan.ios.size(), false);
  for (size_t i = 0; i < needed.size(); ++i) {
    const auto& d = needed[i].second;
    auto it = std::upper_bound(plan.ios.begin(), plan.ios.end(), d.offset,
                               [](uint64_t off, const PlannedIo& io) { return off < io.offset; });
    if (it == plan.ios.begin()) throw Error("read plan does not match projection: stream not covered");
    --it;
    if (d.offset < it->offset || d.end() > it->end())
      throw Error("read plan does not match projection: stream not covered");
    io_of[i] = static_cast<int>(it - plan.ios.begin());
    io_used[io_of[i]] = true;
  }

  std::vector<std::vector<uint8_t>> io_bytes(plan.ios.size());
  for (size_t i = 0; i < plan.ios.size(); ++i) {
    if (!io_used[i]) continue;
    const auto& io = plan.ios[i];
    if (io.offset > source_->size() || io.length > source_->size() - io.offset)
      throw FormatError("read plan I/O outside file bounds");
    io_bytes[i].resize(io.length);
    source_->read(io.offset, io_bytes[i]);
    counters_->bytes += io.length;
    counters_->ios += 1;
  }

  for (size_t i = 0; i < needed.size(); ++i) {
    const auto& [stripe, d] = needed[i];
    const auto& io = plan.ios[io_of[i]];
    auto bytes = std::span<const uint8_t>(io_bytes[io_of[i]]).subspan(d.offset - io.offset, d.length);
    if (checksum(bytes) != d.checksum) throw ChecksumError("stream checksum mismatch");
    Fetched::Stream st{d, {}};
    if (d.codec == Codec::Deflate) {
      st.raw = inflate_bytes(bytes, d.raw_length);
    } else {
      st.raw.assign(bytes.begin(), bytes.end());
    }
    out.stripes[stripe].emplace(std::make_pair(d.feature, d.kind), std::move(st));
  }
  return out;
}

namespace {

bool bit(const std::vector<uint8_t>& bitmap, uint32_t r) { return (bitmap[r >> 3] >> (r & 7)) & 1; }

void check_bitmap(const std::vector<uint8_t>* p, uint32_t rows) {
  if (!p || p->size() != (rows + 7) / 8u) throw FormatError("presence stream missing or wrong size");
}

}  // namespace

std::vector<Sample> TableReader::read_rows(uint32_t first_stripe, uint32_t last_stripe,
                                           const FeatureProjection& projection, const ReadPlan& plan) const {
  auto fetched = fetch(first_stripe, last_stripe, projection, plan);
  std::vector<Sample> out;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s) {
    const size_t si = s - first_stripe;
    const uint32_t rows = stripe_footers_[s].rows;
    const size_t base = out.size();
    out.resize(base + rows);
    const auto* labels = fetched.get(si, kLabelFeature, StreamKind::Labels);
    if (!labels || labels->size() != rows * 4u) throw FormatError("label stream missing or wrong size");
    ByteReader lr(*labels);
    for (uint32_t r = 0; r < rows; ++r) out[base + r].label = lr.f32();

    for (FeatureId f : projection.ids()) {
      const auto* presence = fetched.get(si, f, StreamKind::Presence);
      if (!presence) continue;  // wholly absent in this stripe
      check_bitmap(presence, rows);
      const auto kind = footer_.schema.find(f)->kind;
      const auto* values = fetched.get(si, f, StreamKind::Values);
      if (!values) throw FormatError("values stream missing");
      ByteReader vr(*values);
      if (kind == FeatureKind::Dense) {
        for (uint32_t r = 0; r < rows; ++r)
          if (bit(*presence, r)) out[base + r].dense.emplace(f, vr.f64());
      } else {
        const auto* lengths = fetched.get(si, f, StreamKind::Lengths);
        if (!lengths) throw FormatError("lengths stream missing");
        ByteReader len(*lengths);
        const auto* scores = kind == FeatureKind::ScoredSparse ? fetched.get(si, f, StreamKind::Scores) : nullptr;
        if (kind == FeatureKind::ScoredSparse && !scores) throw FormatError("scores stream missing");
        ByteReader sr(scores ? std::span<const uint8_t>(*scores) : std::span<const uint8_t>());
        for (uint32_t r = 0; r < rows; ++r) {
          if (!bit(*presence, r)) continue;
          uint64_t n = len.varint();
          if (n > vr.remaining()) throw FormatError("sparse length exceeds values stream");
          if (kind == FeatureKind::Sparse) {
            auto& list = out[base + r].sparse[f];
            list.reserve(n);
            for (uint64_t i = 0; i < n; ++i) list.push_back(vr.svarint());
          } else {
            auto& list = out[base + r].scored[f];
            list.reserve(n);
            for (uint64_t i = 0; i < n; ++i) {
              int64_t id = vr.svarint();
              list.push_back({id, sr.f32()});
            }
          }
        }
        if (!len.done()) throw FormatError("lengths stream has trailing data");
      }
      if (!vr.done()) throw FormatError("values stream has trailing data");
    }
  }
  return out;
}

InMemoryRowGroup TableReader::read_row_group(uint32_t first_stripe, uint32_t last_stripe,
                                             const FeatureProjection& projection, const ReadPlan& plan) const {
  auto fetched = fetch(first_stripe, last_stripe, projection, plan);
  InMemoryRowGroup g;
  uint64_t total = 0;
  for (uint32_t s = first_stripe; s <= last_stripe; ++s) total += stripe_footers_[s].rows;
  g.rows = static_cast<uint32_t>(total);
  g.first_row_id = stripe_row_starts_[first_stripe];
  g.labels.reserve(total);
  g.columns.resize(projection.size());
  for (size_t i = 0; i < projection.size(); ++i) {
    auto& c = g.columns[i];
    c.feature = projection.ids()[i];
    c.kind = footer_.schema.find(c.feature)->kind;
    c.reserve_rows(total);
    if (c.kind != FeatureKind::Dense) c.offsets.push_back(0);
  }

  for (uint32_t s = first_stripe; s <= last_stripe; ++s) {
    const size_t si = s - first_stripe;
    const uint32_t rows = stripe_footers_[s].rows;
    const auto* labels = fetched.get(si, kLabelFeature, StreamKind::Labels);
    if (!labels || labels->size() != rows * 4u) throw FormatError("label stream missing or wrong size");
    ByteReader lr(*labels);
    for (uint32_t r = 0; r < rows; ++r) g.labels.push_back(lr.f32());

    for (auto& c : g.columns) {
      const auto* presence = fetched.get(si, c.feature, StreamKind::Presence);
      if (!presence) {
        c.present.insert(c.present.end(), rows, 0);
        if (c.kind == FeatureKind::Dense) {
          c.dense.insert(c.dense.end(), rows, 0.0);
        } else {
          c.offsets.insert(c.offsets.end(), rows, c.offsets.back());
        }
        continue;
      }
      check_bitmap(presence, rows);
      const auto* values = fetched.get(si, c.feature, StreamKind::Values);
      if (!values) throw FormatError("values stream missing");
      ByteReader vr(*values);
      if (c.kind == FeatureKind::Dense) {
        for (uint32_t r = 0; r < rows; ++r) {
          bool p = bit(*presence, r);
          c.present.push_back(p);
          c.dense.push_back(p ? vr.f64() : 0.0);
        }
      } else {
        const auto* lengths = fetched.get(si, c.feature, StreamKind::Lengths);
        if (!lengths) throw FormatError("lengths stream missing");
        ByteReader len(*lengths);
        const auto* scores =
            c.kind == FeatureKind::ScoredSparse ? fetched.get(si, c.feature, StreamKind::Scores) : nullptr;
        if (c.kind == FeatureKind::ScoredSparse && !scores) throw FormatError("scores stream missing");
        ByteReader sr(scores ? std::span<const uint8_t>(*scores) : std::span<const uint8_t>());
        for (uint32_t r = 0; r < rows; ++r) {
          bool p = bit(*presence, r);
          c.present.push_back(p);
          if (p) {
            uint64_t n = len.varint();
            if (n > vr.remaining()) throw FormatError("sparse length exceeds values stream");
            for (uint64_t i = 0; i < n; ++i) {
              c.ids.push_back(vr.svarint());
              if (scores) c.scores.push_back(sr.f32());
            }
          }
          c.offsets.push_back(static_cast<int32_t>(c.ids.size()));
        }
        if (!len.done()) throw FormatError("lengths stream has trailing data");
      }
      if (!vr.done()) throw FormatError("values stream has trailing data");
    }
  }
  return g;
}

}  // namespace dsi
