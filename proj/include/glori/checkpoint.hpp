#pragma once

// "GLRM" model checkpoint.
//
//   magic "GLRM" | version u32
//   config:
//     head u8 | n_findings u32 | n_layers u32 | d_layer u32 | grid_h u32 | grid_w u32
//     d_glori u32 | heads u32 | temp_hidden u32 | n_pyramid u8 | pyramid_k u32 x n_pyramid
//     flags u8 (1 global, 2 adaptive temperature, 4 pyramid) | ln_eps f64 | seed u64
//     lr f64 | beta1 f64 | beta2 f64 | adam_eps f64 | weight_decay f64 | epochs u32 | batch u32
//     n_names u32 | (len u16, utf-8 bytes) x n_names      -- finding names
//     n_tensors u32
//   tensors: (name_len u16, name, rank u8, extent u32 x rank, f64 payload) x n_tensors
//
// All integers and floats little-endian. Parsing then re-encoding reproduces
// the input bytes exactly.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "glori/binary_io.hpp"
#include "glori/error.hpp"
#include "glori/head.hpp"
#include "glori/params.hpp"

namespace glori {

inline constexpr char kCheckpointMagic[4] = {'G', 'L', 'R', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Optimizer settings the parameters were trained with.
struct TrainProvenance {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::uint32_t epochs = 0;
  std::uint32_t batch_size = 0;
};

struct Checkpoint {
  Model model;
  std::vector<std::string> findings;
  TrainProvenance train;
};

namespace detail {

inline std::uint32_t narrow_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw UsageError(std::string(what) + " does not fit in u32");
  }
  return static_cast<std::uint32_t>(v);
}

inline void write_name(ByteWriter& w, const std::string& s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) throw UsageError("name too long");
  w.u16(static_cast<std::uint16_t>(s.size()));
  w.bytes(s);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const GLoRIConfig& c = ck.model.config;
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(ck.model.kind));
  w.u32(detail::narrow_u32(c.n_findings, "n_findings"));
  w.u32(detail::narrow_u32(c.n_layers, "n_layers"));
  w.u32(detail::narrow_u32(c.d_layer, "d_layer"));
  w.u32(detail::narrow_u32(c.grid_h, "grid_h"));
  w.u32(detail::narrow_u32(c.grid_w, "grid_w"));
  w.u32(detail::narrow_u32(c.d_glori, "d_glori"));
  w.u32(detail::narrow_u32(c.heads, "heads"));
  w.u32(detail::narrow_u32(c.temp_hidden, "temp_hidden"));
  if (c.pyramid_ks.size() > 255) throw UsageError("too many pyramid scales");
  w.u8(static_cast<std::uint8_t>(c.pyramid_ks.size()));
  for (std::size_t k : c.pyramid_ks) w.u32(detail::narrow_u32(k, "pyramid size"));
  w.u8(static_cast<std::uint8_t>((c.use_global ? 1 : 0) | (c.use_adaptive_temperature ? 2 : 0) |
                                 (c.use_pyramid ? 4 : 0)));
  w.f64(c.ln_eps);
  w.u64(c.seed);
  w.f64(ck.train.lr);
  w.f64(ck.train.beta1);
  w.f64(ck.train.beta2);
  w.f64(ck.train.adam_eps);
  w.f64(ck.train.weight_decay);
  w.u32(ck.train.epochs);
  w.u32(ck.train.batch_size);
  w.u32(detail::narrow_u32(ck.findings.size(), "finding count"));
  for (const auto& f : ck.findings) detail::write_name(w, f);
  w.u32(detail::narrow_u32(ck.model.params.size(), "tensor count"));
  for (const auto& [name, t] : ck.model.params) {
    detail::write_name(w, name);
    if (t.rank() > 255) throw UsageError("tensor rank too large");
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(detail::narrow_u32(e, "extent"));
    for (double v : t.data()) w.f64(v);
  }
  return std::move(w.buffer());
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                    const std::string& what = "checkpoint") {
  ByteReader r(bytes.data(), bytes.size(), what);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(what + ": bad magic (expected GLRM)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint8_t head = r.u8();
  if (head > 1) throw FormatError(what + ": unknown head kind " + std::to_string(head));
  ck.model.kind = static_cast<HeadKind>(head);
  GLoRIConfig& c = ck.model.config;
  c.n_findings = r.u32();
  c.n_layers = r.u32();
  c.d_layer = r.u32();
  c.grid_h = r.u32();
  c.grid_w = r.u32();
  c.d_glori = r.u32();
  c.heads = r.u32();
  c.temp_hidden = r.u32();
  c.pyramid_ks.assign(r.u8(), 0);
  for (auto& k : c.pyramid_ks) k = r.u32();
  const std::uint8_t flags = r.u8();
  if (flags & ~0x7u) throw FormatError(what + ": unknown config flags");
  c.use_global = flags & 1;
  c.use_adaptive_temperature = flags & 2;
  c.use_pyramid = flags & 4;
  c.ln_eps = r.f64();
  c.seed = r.u64();
  ck.train.lr = r.f64();
  ck.train.beta1 = r.f64();
  ck.train.beta2 = r.f64();
  ck.train.adam_eps = r.f64();
  ck.train.weight_decay = r.f64();
  ck.train.epochs = r.u32();
  ck.train.batch_size = r.u32();
  const std::uint32_t n_names = r.u32();
  for (std::uint32_t i = 0; i < n_names; ++i) ck.findings.push_back(r.bytes(r.u16()));
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.bytes(r.u16());
    Shape shape(r.u8());
    for (auto& e : shape) e = r.u32();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) throw FormatError(what + ": truncated tensor '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    if (ck.model.params.contains(name)) {
      throw FormatError(what + ": duplicate tensor '" + name + "'");
    }
    ck.model.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes after last tensor");
  try {
    c.validate(ck.model.kind);
  } catch (const UsageError& e) {
    throw FormatError(what + ": invalid config: " + e.what());
  }
  const Model reference = init_model(ck.model.kind, c);
  bool layout_ok = reference.params.size() == ck.model.params.size();
  for (std::size_t i = 0; layout_ok && i < reference.params.size(); ++i) {
    layout_ok = reference.params.entry(i).name == ck.model.params.entry(i).name &&
                reference.params.entry(i).tensor.shape() == ck.model.params.entry(i).tensor.shape();
  }
  if (!layout_ok) throw FormatError(what + ": parameter layout does not match config");
  if (!ck.findings.empty() && ck.findings.size() != c.n_findings) {
    throw FormatError(what + ": finding names do not match n_findings");
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace glori
