#pragma once

// "GLRE" embedding store and the CSV side tables.
//
// Store layout (little-endian, no padding):
//   magic "GLRE" | version u32 | n_images u64 | n_layers u8 | H_p u16 | W_p u16 | D_layer u32
//   per image: image_id u64, then per layer: cls f32[D_layer], patches f32[H_p*W_p*D_layer]
//
// Values are f32 on disk and widened to f64 in memory, so write(read(f))
// reproduces f byte for byte.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "glori/binary_io.hpp"
#include "glori/error.hpp"
#include "glori/head.hpp"
#include "glori/survival.hpp"

namespace glori {

inline constexpr char kStoreMagic[4] = {'G', 'L', 'R', 'E'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 4 + 4 + 8 + 1 + 2 + 2 + 4;

struct StoreHeader {
  std::uint32_t version = kStoreVersion;
  std::uint64_t n_images = 0;
  std::uint8_t n_layers = 0;
  std::uint16_t grid_h = 0;
  std::uint16_t grid_w = 0;
  std::uint32_t d_layer = 0;

  std::uint64_t record_bytes() const {
    return 8 + std::uint64_t{n_layers} * (1 + std::uint64_t{grid_h} * grid_w) * d_layer * 4;
  }
  std::uint64_t payload_bytes() const { return n_images * record_bytes(); }
};

namespace detail {

inline StoreHeader header_for(std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw UsageError("write_store: no records");
  const EmbeddingRecord& r0 = records[0];
  if (r0.layers.empty()) throw UsageError("write_store: record without layers");
  StoreHeader h;
  h.n_images = records.size();
  if (r0.n_layers() > 255 || r0.grid_h() > 65535 || r0.grid_w() > 65535 ||
      r0.d_layer() > std::numeric_limits<std::uint32_t>::max()) {
    throw UsageError("write_store: extents exceed header field widths");
  }
  h.n_layers = static_cast<std::uint8_t>(r0.n_layers());
  h.grid_h = static_cast<std::uint16_t>(r0.grid_h());
  h.grid_w = static_cast<std::uint16_t>(r0.grid_w());
  h.d_layer = static_cast<std::uint32_t>(r0.d_layer());
  const Shape grid{h.grid_h, h.grid_w, h.d_layer};
  for (const EmbeddingRecord& r : records) {
    bool ok = r.layers.size() == h.n_layers;
    for (std::size_t l = 0; ok && l < r.layers.size(); ++l) {
      ok = r.layers[l].cls.size() == h.d_layer && r.layers[l].patches.shape() == grid;
    }
    if (!ok) {
      throw UsageError("write_store: record " + std::to_string(r.image_id) +
                       " has inconsistent shape");
    }
  }
  return h;
}

inline StoreHeader parse_store_header(ByteReader& r, const std::string& what) {
  if (r.bytes(4) != std::string_view(kStoreMagic, 4)) {
    throw FormatError(what + ": bad magic (expected GLRE)");
  }
  StoreHeader h;
  h.version = r.u32();
  if (h.version != kStoreVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(h.version));
  }
  h.n_images = r.u64();
  h.n_layers = r.u8();
  h.grid_h = r.u16();
  h.grid_w = r.u16();
  h.d_layer = r.u32();
  if (h.n_layers == 0 || h.grid_h == 0 || h.grid_w == 0 || h.d_layer == 0) {
    throw FormatError(what + ": zero extent in header");
  }
  return h;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_store(std::span<const EmbeddingRecord> records) {
  const StoreHeader h = detail::header_for(records);
  ByteWriter w;
  w.buffer().reserve(kStoreHeaderBytes + h.payload_bytes());
  w.bytes(std::string_view(kStoreMagic, 4));
  w.u32(h.version);
  w.u64(h.n_images);
  w.u8(h.n_layers);
  w.u16(h.grid_h);
  w.u16(h.grid_w);
  w.u32(h.d_layer);
  for (const EmbeddingRecord& r : records) {
    w.u64(r.image_id);
    for (const LayerBlock& b : r.layers) {
      for (double v : b.cls.data()) w.f32(static_cast<float>(v));
      for (double v : b.patches.data()) w.f32(static_cast<float>(v));
    }
  }
  return std::move(w.buffer());
}

inline std::vector<EmbeddingRecord> decode_store(const std::vector<std::uint8_t>& bytes,
                                                 const std::string& what = "store") {
  ByteReader r(bytes.data(), bytes.size(), what);
  const StoreHeader h = detail::parse_store_header(r, what);
  // Size check before any allocation driven by header fields.
  if (h.record_bytes() == 0 || h.n_images > r.remaining() / h.record_bytes() ||
      h.payload_bytes() != r.remaining()) {
    throw FormatError(what + ": truncated payload (header declares " +
                      std::to_string(h.n_images) + " images, " + std::to_string(r.remaining()) +
                      " payload bytes present)");
  }
  std::vector<EmbeddingRecord> out;
  out.reserve(h.n_images);
  const std::size_t cells = std::size_t{h.grid_h} * h.grid_w * h.d_layer;
  for (std::uint64_t i = 0; i < h.n_images; ++i) {
    EmbeddingRecord rec;
    rec.image_id = r.u64();
    rec.layers.reserve(h.n_layers);
    for (std::uint8_t l = 0; l < h.n_layers; ++l) {
      LayerBlock b{Tensor({h.d_layer}), Tensor({h.grid_h, h.grid_w, h.d_layer})};
      for (std::size_t j = 0; j < h.d_layer; ++j) b.cls[j] = r.f32();
      for (std::size_t j = 0; j < cells; ++j) b.patches[j] = r.f32();
      rec.layers.push_back(std::move(b));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_store(const std::filesystem::path& path, std::span<const EmbeddingRecord> recs) {
  write_file_bytes(path, encode_store(recs));
}

inline std::vector<EmbeddingRecord> read_store(const std::filesystem::path& path) {
  return decode_store(read_file_bytes(path), path.string());
}

inline StoreHeader read_store_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint8_t buf[kStoreHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), kStoreHeaderBytes);
  ByteReader r(buf, static_cast<std::size_t>(in.gcount()), path.string());
  return detail::parse_store_header(r, path.string());
}

// ---------------------------------------------------------------------------
// CSV tables (UTF-8, LF line endings, header row)

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

struct CsvRows {
  std::vector<std::string_view> header;
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::size_t> line_numbers;
};

// Views into `text`; the caller keeps it alive.
inline CsvRows parse_csv(std::string_view text, const std::string& what) {
  CsvRows out;
  std::size_t pos = 0, line_no = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      throw FormatError(what + ": line " + std::to_string(line_no) + " has CRLF ending");
    }
    if (line.empty()) continue;
    if (first) {
      out.header = split_csv_line(line);
      first = false;
    } else {
      out.rows.push_back(split_csv_line(line));
      out.line_numbers.push_back(line_no);
    }
  }
  if (first) throw FormatError(what + ": empty file");
  return out;
}

template <class T>
T parse_number(std::string_view s, const std::string& where) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) {
    throw FormatError(where + ": cannot parse '" + std::string(s) + "'");
  }
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

struct LabelTable {
  std::vector<std::string> findings;
  std::vector<std::uint64_t> image_ids;
  std::vector<std::uint8_t> values;  // row-major [n_images, n_findings]

  std::size_t rows() const { return image_ids.size(); }
  std::uint8_t at(std::size_t row, std::size_t finding) const {
    return values[row * findings.size() + finding];
  }
};

inline std::string format_labels(const LabelTable& t) {
  std::string s = "image_id";
  for (const auto& f : t.findings) s += "," + f;
  s += '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    s += std::to_string(t.image_ids[i]);
    for (std::size_t m = 0; m < t.findings.size(); ++m) s += t.at(i, m) ? ",1" : ",0";
    s += '\n';
  }
  return s;
}

inline LabelTable parse_labels(std::string_view text, const std::vector<std::string>& findings,
                               const std::string& what = "labels") {
  const auto csv = detail::parse_csv(text, what);
  if (csv.header.size() != findings.size() + 1 || csv.header[0] != "image_id") {
    throw FormatError(what + ": header must be image_id followed by " +
                      std::to_string(findings.size()) + " finding columns");
  }
  for (std::size_t m = 0; m < findings.size(); ++m) {
    if (csv.header[m + 1] != findings[m]) {
      throw FormatError(what + ": column " + std::to_string(m + 2) + " is '" +
                        std::string(csv.header[m + 1]) + "', expected '" + findings[m] + "'");
    }
  }
  LabelTable t;
  t.findings = findings;
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = what + ": line " + std::to_string(csv.line_numbers[i]);
    if (row.size() != csv.header.size()) throw FormatError(where + ": wrong number of columns");
    const auto id = detail::parse_number<std::uint64_t>(row[0], where);
    if (!seen.insert(id).second) throw FormatError(where + ": duplicate image_id " + std::string(row[0]));
    t.image_ids.push_back(id);
    for (std::size_t m = 0; m < findings.size(); ++m) {
      if (row[m + 1] == "0") {
        t.values.push_back(0);
      } else if (row[m + 1] == "1") {
        t.values.push_back(1);
      } else {
        throw FormatError(where + ": non-binary label '" + std::string(row[m + 1]) + "'");
      }
    }
  }
  return t;
}

inline LabelTable read_labels(const std::filesystem::path& path,
                              const std::vector<std::string>& findings) {
  return parse_labels(read_text_file(path), findings, path.string());
}

inline std::string format_survival(std::span<const SurvivalRecord> recs) {
  std::string s = "image_id,time_days,event\n";
  for (const auto& r : recs) {
    s += std::to_string(r.subject_id) + "," + detail::format_double(r.time) + "," +
         (r.event ? "1" : "0") + "\n";
  }
  return s;
}

inline std::vector<SurvivalRecord> parse_survival(std::string_view text,
                                                  const std::string& what = "survival") {
  const auto csv = detail::parse_csv(text, what);
  if (csv.header.size() != 3 || csv.header[0] != "image_id" || csv.header[1] != "time_days" ||
      csv.header[2] != "event") {
    throw FormatError(what + ": header must be image_id,time_days,event");
  }
  std::vector<SurvivalRecord> out;
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = what + ": line " + std::to_string(csv.line_numbers[i]);
    if (row.size() != 3) throw FormatError(where + ": wrong number of columns");
    SurvivalRecord r;
    r.subject_id = detail::parse_number<std::uint64_t>(row[0], where);
    if (!seen.insert(r.subject_id).second) throw FormatError(where + ": duplicate image_id");
    r.time = detail::parse_number<double>(row[1], where);
    if (!(r.time >= 0.0) || !std::isfinite(r.time)) throw FormatError(where + ": negative time");
    if (row[2] == "1") {
      r.event = true;
    } else if (row[2] != "0") {
      throw FormatError(where + ": event must be 0 or 1");
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<SurvivalRecord> read_survival(const std::filesystem::path& path) {
  return parse_survival(read_text_file(path), path.string());
}

// Ground-truth planted rectangle [row0,row1) x [col0,col1) for a positive
// (image, finding) pair.
struct PlantedRegion {
  std::uint64_t image_id = 0;
  std::size_t finding = 0;
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r < row1 && c >= col0 && c < col1;
  }
  std::size_t area() const { return (row1 - row0) * (col1 - col0); }
};

inline std::string format_regions(std::span<const PlantedRegion> regions,
                                  const std::vector<std::string>& findings) {
  std::string s = "image_id,finding,row0,col0,row1,col1\n";
  for (const auto& g : regions) {
    s += std::to_string(g.image_id) + "," + findings.at(g.finding) + "," + std::to_string(g.row0) +
         "," + std::to_string(g.col0) + "," + std::to_string(g.row1) + "," +
         std::to_string(g.col1) + "\n";
  }
  return s;
}

inline std::vector<PlantedRegion> parse_regions(std::string_view text,
                                                const std::vector<std::string>& findings,
                                                const std::string& what = "regions") {
  const auto csv = detail::parse_csv(text, what);
  if (csv.header.size() != 6 || csv.header[0] != "image_id" || csv.header[1] != "finding") {
    throw FormatError(what + ": header must be image_id,finding,row0,col0,row1,col1");
  }
  std::vector<PlantedRegion> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = what + ": line " + std::to_string(csv.line_numbers[i]);
    if (row.size() != 6) throw FormatError(where + ": wrong number of columns");
    PlantedRegion g;
    g.image_id = detail::parse_number<std::uint64_t>(row[0], where);
    const auto it = std::find(findings.begin(), findings.end(), row[1]);
    if (it == findings.end()) throw FormatError(where + ": unknown finding '" + std::string(row[1]) + "'");
    g.finding = static_cast<std::size_t>(it - findings.begin());
    g.row0 = detail::parse_number<std::size_t>(row[2], where);
    g.col0 = detail::parse_number<std::size_t>(row[3], where);
    g.row1 = detail::parse_number<std::size_t>(row[4], where);
    g.col1 = detail::parse_number<std::size_t>(row[5], where);
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labelled splits

// A store's records with their label rows, aligned by position.
struct Split {
  std::vector<EmbeddingRecord> records;
  std::vector<std::uint8_t> labels;  // [n, n_findings]
  std::size_t n_findings = 0;

  std::size_t size() const { return records.size(); }
  const std::uint8_t* label_row(std::size_t i) const { return labels.data() + i * n_findings; }
};

// Attach labels to records. Every record id must be present in the table.
inline Split align_labels(std::vector<EmbeddingRecord> records, const LabelTable& table) {
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < table.rows(); ++i) row_of.emplace(table.image_ids[i], i);
  Split s;
  s.n_findings = table.findings.size();
  s.labels.reserve(records.size() * s.n_findings);
  for (const auto& r : records) {
    const auto it = row_of.find(r.image_id);
    if (it == row_of.end()) {
      throw FormatError("image_id " + std::to_string(r.image_id) + " missing from label table");
    }
    for (std::size_t m = 0; m < s.n_findings; ++m) s.labels.push_back(table.at(it->second, m));
  }
  s.records = std::move(records);
  return s;
}

// Non-owning view over one or more splits; training and evaluation read
// records through it and never modify them.
class DataView {
 public:
  DataView() = default;
  explicit DataView(const Split& s) { append(s); }

  static DataView join(const Split& a, const Split& b) {
    DataView v(a);
    v.append(b);
    return v;
  }

  void append(const Split& s) {
    if (n_findings_ && s.n_findings != n_findings_) throw UsageError("label width mismatch");
    n_findings_ = s.n_findings;
    for (std::size_t i = 0; i < s.size(); ++i) {
      records_.push_back(&s.records[i]);
      labels_.push_back(s.label_row(i));
    }
  }

  void append(const DataView& v) {
    if (n_findings_ && v.n_findings_ != n_findings_) throw UsageError("label width mismatch");
    n_findings_ = v.n_findings_;
    records_.insert(records_.end(), v.records_.begin(), v.records_.end());
    labels_.insert(labels_.end(), v.labels_.begin(), v.labels_.end());
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t n_findings() const { return n_findings_; }
  const EmbeddingRecord& record(std::size_t i) const { return *records_[i]; }
  const std::uint8_t* label_row(std::size_t i) const { return labels_[i]; }

 private:
  std::vector<const EmbeddingRecord*> records_;
  std::vector<const std::uint8_t*> labels_;
  std::size_t n_findings_ = 0;
};

}  // namespace glori
