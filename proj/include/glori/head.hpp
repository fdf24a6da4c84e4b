#pragma once

// GLoRI prediction head and the linear-probe baseline over frozen backbone
// embeddings.
//
//   u (N x D_model patch tokens)
//    |-- embed: relu(u We + be) -----------------------> fine MHA (tau) --+
//    |-- mean over N -> MLP(tanh) -> tanh -> exp = tau -----^             |
//    `-- pyramid: pool k=8,4,2 -> relu proj -> upsample -> concat -> LN   |
//                                                     -> coarse MHA ------+
//   cls (D_model) -> linear ------------------------------------------- sum -> M tokens
//   token_m -> <w_m, token_m> + b_m = logit_m
//
// Each component can be switched off for the ablation ladder
// (attention pooler -> +global -> +adaptive temperature -> +pyramid).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glori/autodiff.hpp"
#include "glori/error.hpp"
#include "glori/params.hpp"
#include "glori/rng.hpp"
#include "glori/tensor.hpp"

namespace glori {

// One backbone layer's output for an image.
struct LayerBlock {
  Tensor cls;      // [D_layer]
  Tensor patches;  // [H_p, W_p, D_layer]
};

struct EmbeddingRecord {
  std::uint64_t image_id = 0;
  std::vector<LayerBlock> layers;

  std::size_t n_layers() const { return layers.size(); }
  std::size_t grid_h() const { return layers.empty() ? 0 : layers[0].patches.dim(0); }
  std::size_t grid_w() const { return layers.empty() ? 0 : layers[0].patches.dim(1); }
  std::size_t d_layer() const { return layers.empty() ? 0 : layers[0].cls.size(); }
};

enum class HeadKind : std::uint8_t { linear = 0, glori = 1 };

inline const char* to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "glori"; }

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "glori") return HeadKind::glori;
  throw UsageError("unknown head '" + s + "' (expected linear|glori)");
}

enum class Branch { fine, coarse };

struct GLoRIConfig {
  std::size_t n_findings = 0;  // M
  std::size_t n_layers = 4;
  std::size_t d_layer = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t d_glori = 768;
  std::size_t heads = 8;
  std::vector<std::size_t> pyramid_ks{8, 4, 2};
  std::size_t temp_hidden = 256;
  std::uint64_t seed = 0;
  bool use_global = true;
  bool use_adaptive_temperature = true;
  bool use_pyramid = true;
  double ln_eps = kLayerNormEps;

  std::size_t d_model() const { return n_layers * d_layer; }
  std::size_t n_patches() const { return grid_h * grid_w; }
  std::size_t d_key() const { return heads ? d_glori / heads : 0; }

  // Output width of each pyramid scale; sums to d_model.
  std::vector<std::size_t> pyramid_widths() const {
    const std::size_t s = pyramid_ks.size();
    const std::size_t d = d_model();
    std::vector<std::size_t> w(s, (d + s - 1) / s);
    if (s) w.back() = d - (s - 1) * w[0];
    return w;
  }

  void validate(HeadKind kind = HeadKind::glori) const {
    if (n_findings == 0) throw UsageError("config: need at least one finding");
    if (n_layers == 0 || d_layer == 0) throw UsageError("config: empty embedding width");
    if (grid_h == 0 || grid_w == 0) throw UsageError("config: empty patch grid");
    if (kind == HeadKind::linear) return;
    if (heads == 0 || d_glori == 0 || d_glori % heads != 0) {
      throw UsageError("config: d_glori (" + std::to_string(d_glori) +
                       ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
    }
    if (use_adaptive_temperature && temp_hidden == 0) {
      throw UsageError("config: temp_hidden must be positive");
    }
    if (use_pyramid) {
      if (pyramid_ks.empty()) throw UsageError("config: empty pyramid");
      for (std::size_t k : pyramid_ks) {
        if (k == 0 || grid_h % k != 0 || grid_w % k != 0) {
          throw UsageError("config: grid " + std::to_string(grid_h) + "x" +
                           std::to_string(grid_w) + " not divisible by pyramid size " +
                           std::to_string(k));
        }
      }
      const auto w = pyramid_widths();
      const std::size_t first = w[0] * (w.size() - 1);
      if (first >= d_model()) {
        throw UsageError("config: d_model too small to split across pyramid scales");
      }
    }
    if (!(ln_eps > 0.0)) throw UsageError("config: layer-norm eps must be positive");
  }

  // Throws FormatError if `rec` does not have the extents this config expects.
  void check_record(const EmbeddingRecord& rec) const {
    auto fail = [&](const std::string& what) {
      throw FormatError("record " + std::to_string(rec.image_id) + ": " + what);
    };
    if (rec.layers.size() != n_layers) {
      fail("has " + std::to_string(rec.layers.size()) + " layers, expected " +
           std::to_string(n_layers));
    }
    for (const LayerBlock& b : rec.layers) {
      if (b.cls.size() != d_layer) fail("cls width mismatch");
      if (b.patches.shape() != Shape{grid_h, grid_w, d_layer}) {
        fail("patch grid " + shape_str(b.patches.shape()) + " expected " +
             shape_str(Shape{grid_h, grid_w, d_layer}));
      }
    }
  }
};

// Concatenation of the per-layer blocks along the feature axis.
struct ConcatenatedTokens {
  Tensor patches;  // [H_p, W_p, L*D_layer]
  Tensor cls;      // [1, L*D_layer]
};

inline ConcatenatedTokens concat_layers(const EmbeddingRecord& rec) {
  if (rec.layers.empty()) throw FormatError("record has no layers");
  const std::size_t h = rec.grid_h(), w = rec.grid_w(), d = rec.d_layer();
  const std::size_t l = rec.n_layers(), dm = l * d;
  ConcatenatedTokens out{Tensor({h, w, dm}), Tensor({1, dm})};
  for (std::size_t li = 0; li < l; ++li) {
    const LayerBlock& b = rec.layers[li];
    std::copy_n(b.cls.data().begin(), d, out.cls.data().begin() + li * d);
    for (std::size_t p = 0; p < h * w; ++p) {
      std::copy_n(b.patches.data().begin() + p * d, d, out.patches.data().begin() + p * dm + li * d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter initialisation

namespace detail {

// Each tensor draws from its own named stream, so switching a component off
// leaves the initial values of every other tensor unchanged.
inline Engine init_stream(std::uint64_t seed, const std::string& name) {
  return substream(seed, "init/" + name);
}

inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::uint64_t seed,
                             const std::string& name) {
  Engine eng = init_stream(seed, name);
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = uniform(eng, -bound, bound);
  return t;
}

inline void add_linear(ParamSet& p, const std::string& prefix, std::size_t in, std::size_t out,
                       std::uint64_t seed) {
  p.add(prefix + "w", uniform_fan_in({in, out}, in, seed, prefix + "w"));
  p.add(prefix + "b", uniform_fan_in({out}, in, seed, prefix + "b"));
}

inline Tensor standard_normal(Shape shape, std::uint64_t seed, const std::string& name) {
  Engine eng = init_stream(seed, name);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal01(eng);
  return t;
}

inline void add_attention(ParamSet& p, const std::string& prefix, std::size_t m,
                          std::size_t d_source, std::size_t d_glori, std::uint64_t seed) {
  p.add(prefix + "query", standard_normal({m, d_glori}, seed, prefix + "query"));
  add_linear(p, prefix + "k.", d_source, d_glori, seed);
  add_linear(p, prefix + "v.", d_source, d_glori, seed);
  add_linear(p, prefix + "o.", d_glori, d_glori, seed);
}

inline std::string pyramid_prefix(std::size_t s) { return "pyramid.s" + std::to_string(s) + "."; }

}  // namespace detail

// Fresh GLoRI parameters. Queries ~ N(0,1); other affine maps uniform in
// +-sqrt(1/fan_in); classifier rows start at zero so every logit is 0.
inline ParamSet init_glori_params(const GLoRIConfig& cfg) {
  cfg.validate(HeadKind::glori);
  const std::uint64_t seed = cfg.seed;
  const std::size_t dm = cfg.d_model(), dg = cfg.d_glori, m = cfg.n_findings;
  ParamSet p;
  detail::add_linear(p, "embed.", dm, dg, seed);
  detail::add_attention(p, "fine.", m, dg, dg, seed);
  if (cfg.use_adaptive_temperature) {
    detail::add_linear(p, "temp.l1.", dm, cfg.temp_hidden, seed);
    detail::add_linear(p, "temp.l2.", cfg.temp_hidden, m, seed);
  }
  if (cfg.use_pyramid) {
    const auto widths = cfg.pyramid_widths();
    for (std::size_t s = 0; s < widths.size(); ++s) {
      detail::add_linear(p, detail::pyramid_prefix(s), dm, widths[s], seed);
    }
    p.add("pyramid.ln.gamma", Tensor({dm}, 1.0));
    p.add("pyramid.ln.beta", Tensor({dm}, 0.0));
    detail::add_attention(p, "coarse.", m, dm, dg, seed);
  }
  if (cfg.use_global) detail::add_linear(p, "global.", dm, dg, seed);
  p.add("classifier.w", Tensor({m, dg}, 0.0));
  p.add("classifier.b", Tensor({m}, 0.0));
  return p;
}

inline ParamSet init_linear_probe_params(const GLoRIConfig& cfg) {
  cfg.validate(HeadKind::linear);
  ParamSet p;
  p.add("probe.w", Tensor({cfg.d_model(), cfg.n_findings}, 0.0));
  p.add("probe.b", Tensor({cfg.n_findings}, 0.0));
  return p;
}

// ---------------------------------------------------------------------------
// Components

// relu(u We + be): [N, D_model] -> [N, D_glori]
inline Var embed_patches(const VarSet& p, Var u) {
  return relu(linear(u, p["embed.w"], p["embed.b"]));
}

// exp(tanh(MLP(mean_N u))) -> [M], each entry in [1/e, e].
inline Var adaptive_temperature(const VarSet& p, Var u) {
  Var pooled = mean_rows(u);
  Var h = tanh(linear(pooled, p["temp.l1.w"], p["temp.l1.b"]));
  Var t = exp(tanh(linear(h, p["temp.l2.w"], p["temp.l2.b"])));
  return reshape(t, Shape{t.value().size()});
}

struct AttentionResult {
  Var out;      // [M, D_glori]
  Tensor maps;  // [M, N], head-averaged attention weights
};

// Multi-head cross attention of the `prefix` query bank over `source` rows.
// Head h attends with softmax(q_h k_h^T / (sqrt(d_key) tau)); the heads share
// one temperature per query.
inline AttentionResult multi_head_attention(const VarSet& p, const std::string& prefix,
                                            Var source, Var tau, std::size_t heads) {
  Var q = p[prefix + "query"];
  const std::size_t m = q.dim(0), dg = q.dim(1);
  if (heads == 0 || dg % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t dk = dg / heads;
  Var k = linear(source, p[prefix + "k.w"], p[prefix + "k.b"]);
  Var v = linear(source, p[prefix + "v.w"], p[prefix + "v.b"]);
  const std::size_t n = k.dim(0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor maps({m, n});
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dk, dk);
    Var kh = slice_cols(k, h * dk, dk);
    Var vh = slice_cols(v, h * dk, dk);
    Var weights = softmax_with_temperature(scale(matmul_nt(qh, kh), inv_sqrt), tau);
    const Tensor& wv = weights.value();
    for (std::size_t i = 0; i < m * n; ++i) maps[i] += wv[i];
    head_out.push_back(matmul(weights, vh));
  }
  for (double& x : maps.data()) x /= static_cast<double>(heads);
  Var merged = heads == 1 ? head_out[0] : concat(head_out, 1);
  return {linear(merged, p[prefix + "o.w"], p[prefix + "o.b"]), std::move(maps)};
}

inline AttentionResult attention_fine(const VarSet& p, const GLoRIConfig& cfg, Var u_embedded,
                                      Var tau) {
  return multi_head_attention(p, "fine.", u_embedded, tau, cfg.heads);
}

// [H_p, W_p, D_model] -> [N, D_model]: per scale k pool, project with relu,
// upsample back; concatenate scales and layer-normalise.
inline Var pyramid_merge(const VarSet& p, const GLoRIConfig& cfg, Var grid) {
  const Shape& s = grid.shape();
  if (s.size() != 3) throw ShapeError("pyramid_merge: expected [H,W,D] grid");
  const std::size_t h = s[0], w = s[1], dm = s[2];
  std::vector<Var> scales;
  for (std::size_t i = 0; i < cfg.pyramid_ks.size(); ++i) {
    const std::size_t k = cfg.pyramid_ks[i];
    Var pooled = avg_pool2d(grid, k);
    const std::size_t ph = h / k, pw = w / k;
    Var rows = reshape(pooled, Shape{ph * pw, dm});
    const std::string pre = detail::pyramid_prefix(i);
    Var proj = relu(linear(rows, p[pre + "w"], p[pre + "b"]));
    const std::size_t width = proj.dim(1);
    scales.push_back(upsample_nearest(reshape(proj, Shape{ph, pw, width}), k));
  }
  Var merged = scales.size() == 1 ? scales[0] : concat(scales, 2);
  Var flat = reshape(merged, Shape{h * w, merged.dim(2)});
  return layer_norm(flat, p["pyramid.ln.gamma"], p["pyramid.ln.beta"], cfg.ln_eps);
}

// Coarse branch; temperature fixed at 1.
inline AttentionResult attention_coarse(const VarSet& p, const GLoRIConfig& cfg, Var u_pyr) {
  Var ones = u_pyr.tape().constant(Tensor({cfg.n_findings}, 1.0));
  return multi_head_attention(p, "coarse.", u_pyr, ones, cfg.heads);
}

// token_m = fine_m (+ coarse_m) (+ cls W_g + b_g)
inline Var integrate_global(const VarSet& p, Var fine, std::optional<Var> coarse,
                            std::optional<Var> cls) {
  Var tokens = fine;
  if (coarse) tokens = add(tokens, *coarse);
  if (cls) {
    Var g = linear(*cls, p["global.w"], p["global.b"]);
    tokens = add_rowvec(tokens, reshape(g, Shape{g.value().size()}));
  }
  return tokens;
}

// logit_m = <w_m, token_m> + b_m
inline Var classify(const VarSet& p, Var tokens) {
  return add(rowwise_dot(tokens, p["classifier.w"]), p["classifier.b"]);
}

struct HeadOutput {
  Var logits;          // [M]
  Tensor fine_maps;    // [M, N]; empty for the linear probe
  Tensor coarse_maps;  // [M, N]; empty unless the pyramid branch is on
};

inline HeadOutput glori_forward(Tape& tape, const VarSet& p, const GLoRIConfig& cfg,
                                const EmbeddingRecord& rec) {
  cfg.check_record(rec);
  ConcatenatedTokens tok = concat_layers(rec);
  const std::size_t n = cfg.n_patches(), dm = cfg.d_model();
  Var grid = tape.constant(std::move(tok.patches));
  Var u = reshape(grid, Shape{n, dm});
  Var cls = tape.constant(std::move(tok.cls));

  Var u_emb = embed_patches(p, u);
  Var tau = cfg.use_adaptive_temperature
                ? adaptive_temperature(p, u)
                : tape.constant(Tensor({cfg.n_findings}, 1.0));
  AttentionResult fine = attention_fine(p, cfg, u_emb, tau);

  HeadOutput out;
  std::optional<Var> coarse_out;
  if (cfg.use_pyramid) {
    AttentionResult coarse = attention_coarse(p, cfg, pyramid_merge(p, cfg, grid));
    coarse_out = coarse.out;
    out.coarse_maps = std::move(coarse.maps);
  }
  std::optional<Var> cls_in;
  if (cfg.use_global) cls_in = cls;
  Var tokens = integrate_global(p, fine.out, coarse_out, cls_in);
  out.logits = classify(p, tokens);
  out.fine_maps = std::move(fine.maps);
  return out;
}

// logits = concat_L(cls) W + b
inline HeadOutput linear_probe_forward(Tape& tape, const VarSet& p, const GLoRIConfig& cfg,
                                       const EmbeddingRecord& rec) {
  if (rec.layers.size() != cfg.n_layers) throw FormatError("record layer count mismatch");
  const std::size_t d = cfg.d_layer;
  Tensor cls({1, cfg.d_model()});
  for (std::size_t l = 0; l < rec.layers.size(); ++l) {
    if (rec.layers[l].cls.size() != d) throw FormatError("record cls width mismatch");
    std::copy_n(rec.layers[l].cls.data().begin(), d, cls.data().begin() + l * d);
  }
  Var y = linear(tape.constant(std::move(cls)), p["probe.w"], p["probe.b"]);
  return {reshape(y, Shape{cfg.n_findings}), Tensor(), Tensor()};
}

// ---------------------------------------------------------------------------
// Model: head kind + config + parameters

struct Model {
  HeadKind kind = HeadKind::glori;
  GLoRIConfig config;
  ParamSet params;
};

inline Model init_model(HeadKind kind, const GLoRIConfig& cfg) {
  return Model{kind, cfg,
               kind == HeadKind::glori ? init_glori_params(cfg) : init_linear_probe_params(cfg)};
}

inline HeadOutput forward(Tape& tape, const VarSet& p, HeadKind kind, const GLoRIConfig& cfg,
                          const EmbeddingRecord& rec) {
  return kind == HeadKind::glori ? glori_forward(tape, p, cfg, rec)
                                 : linear_probe_forward(tape, p, cfg, rec);
}

inline std::vector<double> predict_logits(const Model& model, const EmbeddingRecord& rec) {
  Tape tape;
  VarSet p(tape, model.params, false);
  const Tensor& z = forward(tape, p, model.kind, model.config, rec).logits.value();
  return {z.data().begin(), z.data().end()};
}

// Head-averaged attention of one disease query, reshaped to the patch grid.
inline Tensor attention_map(const Model& model, const EmbeddingRecord& rec,
                            std::size_t disease_index, Branch branch) {
  if (model.kind != HeadKind::glori) throw UsageError("attention maps need a GLoRI head");
  const GLoRIConfig& cfg = model.config;
  if (disease_index >= cfg.n_findings) {
    throw UsageError("disease index " + std::to_string(disease_index) + " out of range [0," +
                     std::to_string(cfg.n_findings) + ")");
  }
  if (branch == Branch::coarse && !cfg.use_pyramid) {
    throw UsageError("model has no coarse branch");
  }
  Tape tape;
  VarSet p(tape, model.params, false);
  HeadOutput out = glori_forward(tape, p, cfg, rec);
  const Tensor& maps = branch == Branch::fine ? out.fine_maps : out.coarse_maps;
  const std::size_t n = cfg.n_patches();
  Tensor grid({cfg.grid_h, cfg.grid_w});
  std::copy_n(maps.data().begin() + disease_index * n, n, grid.data().begin());
  return grid;
}

}  // namespace glori
