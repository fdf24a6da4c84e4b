#pragma once

// Synthetic planted-signal embeddings standing in for a frozen backbone, and
// the on-disk data directory layout:
//
//   train.glre  val.glre  test.glre   embedding stores
//   labels.csv                        image_id + one 0/1 column per finding, all splits
//   survival.csv                      image_id,time_days,event for every image
//   regions.csv                       planted rectangle of each positive patch finding

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "glori/error.hpp"
#include "glori/head.hpp"
#include "glori/rng.hpp"
#include "glori/store.hpp"
#include "glori/survival.hpp"

namespace glori {

enum class SignalKind { focal, diffuse, global };

inline const char* to_string(SignalKind k) {
  switch (k) {
    case SignalKind::focal: return "focal";
    case SignalKind::diffuse: return "diffuse";
    default: return "global";
  }
}

inline SignalKind parse_signal_kind(const std::string& s) {
  if (s == "focal") return SignalKind::focal;
  if (s == "diffuse") return SignalKind::diffuse;
  if (s == "global") return SignalKind::global;
  throw UsageError("unknown signal kind '" + s + "' (expected focal, diffuse or global)");
}

struct FindingSpec {
  std::string name;
  SignalKind kind = SignalKind::focal;
  double prevalence = 0.1;
  double amplitude = 1.0;  // along the finding's unit direction
};

struct SyntheticSpec {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t grid_h = 16;
  std::size_t grid_w = 16;
  std::size_t d_layer = 16;
  std::size_t n_layers = 4;
  double noise = 1.0;
  // Per-image gain g = exp(U(-s, s)) applied to the whole image, with a
  // shared offset direction scaled by g so the gain is visible in the mean.
  double contrast_spread = 0.0;
  double contrast_offset = 0.0;
  // Negatives of a diffuse finding carry the same number of signal cells,
  // scattered at random, so only the spatial layout separates the classes.
  bool diffuse_decoys = true;
  std::vector<FindingSpec> findings;
  // Survival: hazard = base_hazard * exp(hazard_beta * planted global
  // amplitude), censoring uniform in [censor_min_days, censor_max_days].
  double base_hazard = 1.0 / 3000.0;
  double hazard_beta = 1.0;
  double censor_min_days = 365.0;
  double censor_max_days = 3650.0;
  std::uint64_t seed = 0;

  std::size_t n_patches() const { return grid_h * grid_w; }
  std::size_t d_model() const { return n_layers * d_layer; }
  std::size_t focal_max_area() const {
    return static_cast<std::size_t>(std::floor(0.04 * static_cast<double>(n_patches()) + 1e-9));
  }

  std::vector<std::string> finding_names() const {
    std::vector<std::string> out;
    for (const auto& f : findings) out.push_back(f.name);
    return out;
  }

  void validate() const {
    if (findings.empty()) throw UsageError("spec: no findings");
    if (n_train == 0 || n_val == 0 || n_test == 0) throw UsageError("spec: every split needs images");
    if (grid_h == 0 || grid_w == 0 || grid_h % 8 || grid_w % 8) {
      throw UsageError("spec: grid extents must be positive multiples of 8");
    }
    if (grid_h > 65535 || grid_w > 65535 || n_layers == 0 || n_layers > 255 || d_layer == 0) {
      throw UsageError("spec: grid, layer count or layer width out of range");
    }
    if (!(noise >= 0.0) || !(contrast_spread >= 0.0) || !std::isfinite(contrast_offset)) {
      throw UsageError("spec: noise and contrast_spread must be non-negative");
    }
    if (focal_max_area() < 1) throw UsageError("spec: grid too small for a focal region");
    if (!(base_hazard > 0.0) || !std::isfinite(hazard_beta) ||
        !(censor_min_days > 0.0 && censor_max_days >= censor_min_days)) {
      throw UsageError("spec: invalid survival parameters");
    }
    for (std::size_t i = 0; i < findings.size(); ++i) {
      const FindingSpec& f = findings[i];
      if (f.name.empty() || f.name.find_first_of(",\n\r\"") != std::string::npos ||
          f.name == "image_id") {
        throw UsageError("spec: invalid finding name '" + f.name + "'");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (findings[j].name == f.name) throw UsageError("spec: duplicate finding '" + f.name + "'");
      }
      if (!(f.prevalence > 0.0 && f.prevalence < 1.0)) {
        throw UsageError("spec: prevalence of '" + f.name + "' must lie in (0,1)");
      }
      if (!(f.amplitude >= 0.0) || !std::isfinite(f.amplitude)) {
        throw UsageError("spec: amplitude of '" + f.name + "' must be finite and non-negative");
      }
      for (std::size_t n : {n_train, n_val, n_test}) {
        if (f.prevalence * static_cast<double>(n) < 1.0) {
          throw UsageError("spec: prevalence " + std::to_string(f.prevalence) + " of '" + f.name +
                           "' gives fewer than one expected positive in a split of " +
                           std::to_string(n));
        }
      }
    }
  }
};

// Benchmark defaults: 2000/500/500 images, 16x16 grid, four 16-wide layers,
// eight findings across all three signal kinds and prevalence tiers, and a
// per-image gain and offset on every embedding.
inline SyntheticSpec default_synthetic_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.seed = seed;
  s.contrast_spread = 0.7;
  s.contrast_offset = 2.0;
  s.findings = {
      {"focal_1", SignalKind::focal, 0.30, 16.0},    {"diffuse_1", SignalKind::diffuse, 0.25, 1.0},
      {"global_1", SignalKind::global, 0.20, 1.0},   {"focal_2", SignalKind::focal, 0.12, 16.0},
      {"diffuse_2", SignalKind::diffuse, 0.05, 1.0}, {"focal_3", SignalKind::focal, 0.04, 16.0},
      {"focal_4", SignalKind::focal, 0.03, 16.0},    {"global_2", SignalKind::global, 0.008, 6.0},
  };
  return s;
}

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["n_train"] = s.n_train;
  j["n_val"] = s.n_val;
  j["n_test"] = s.n_test;
  j["grid_h"] = s.grid_h;
  j["grid_w"] = s.grid_w;
  j["d_layer"] = s.d_layer;
  j["n_layers"] = s.n_layers;
  j["noise"] = s.noise;
  j["contrast_spread"] = s.contrast_spread;
  j["contrast_offset"] = s.contrast_offset;
  j["diffuse_decoys"] = s.diffuse_decoys;
  j["base_hazard"] = s.base_hazard;
  j["hazard_beta"] = s.hazard_beta;
  j["censor_min_days"] = s.censor_min_days;
  j["censor_max_days"] = s.censor_max_days;
  j["seed"] = s.seed;
  auto& fs = j["findings"] = nlohmann::ordered_json::array();
  for (const auto& f : s.findings) {
    nlohmann::ordered_json jf;
    jf["name"] = f.name;
    jf["kind"] = to_string(f.kind);
    jf["prevalence"] = f.prevalence;
    jf["amplitude"] = f.amplitude;
    fs.push_back(std::move(jf));
  }
  return j;
}

// Keys absent from `j` keep their default values; unknown keys are rejected.
inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("spec: top level must be a JSON object");
  SyntheticSpec s = default_synthetic_spec();
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_train") s.n_train = v.get<std::size_t>();
      else if (key == "n_val") s.n_val = v.get<std::size_t>();
      else if (key == "n_test") s.n_test = v.get<std::size_t>();
      else if (key == "grid_h") s.grid_h = v.get<std::size_t>();
      else if (key == "grid_w") s.grid_w = v.get<std::size_t>();
      else if (key == "d_layer") s.d_layer = v.get<std::size_t>();
      else if (key == "n_layers") s.n_layers = v.get<std::size_t>();
      else if (key == "noise") s.noise = v.get<double>();
      else if (key == "contrast_spread") s.contrast_spread = v.get<double>();
      else if (key == "contrast_offset") s.contrast_offset = v.get<double>();
      else if (key == "diffuse_decoys") s.diffuse_decoys = v.get<bool>();
      else if (key == "base_hazard") s.base_hazard = v.get<double>();
      else if (key == "hazard_beta") s.hazard_beta = v.get<double>();
      else if (key == "censor_min_days") s.censor_min_days = v.get<double>();
      else if (key == "censor_max_days") s.censor_max_days = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "findings") {
        if (!v.is_array()) throw UsageError("spec: findings must be an array");
        s.findings.clear();
        for (const auto& jf : v) {
          FindingSpec f;
          f.name = jf.at("name").get<std::string>();
          f.kind = parse_signal_kind(jf.at("kind").get<std::string>());
          f.prevalence = jf.at("prevalence").get<double>();
          f.amplitude = jf.at("amplitude").get<double>();
          s.findings.push_back(std::move(f));
        }
      } else {
        throw UsageError("spec: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

struct SyntheticDataset {
  std::vector<std::string> findings;
  std::vector<EmbeddingRecord> train, val, test;
  LabelTable labels;  // train, then val, then test rows
  std::vector<SurvivalRecord> survival;
  std::vector<PlantedRegion> regions;
};

namespace detail {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Exactly round(p * n) positives, placed by a partial Fisher-Yates draw.
inline std::vector<std::uint8_t> draw_labels(std::size_t n, double p, Engine& eng) {
  const auto k = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::uint8_t> y(n, 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(eng, n - i));
    std::swap(idx[i], idx[j]);
    y[idx[i]] = 1;
  }
  return y;
}

inline PlantedRegion draw_region(const SyntheticSpec& s, SignalKind kind, Engine& eng) {
  std::size_t h, w;
  if (kind == SignalKind::focal) {
    // 1x1, 1x2, 2x1 or 2x2, limited by the 4% area bound.
    do {
      h = 1 + static_cast<std::size_t>(uniform_index(eng, 2));
      w = 1 + static_cast<std::size_t>(uniform_index(eng, 2));
    } while (h * w > s.focal_max_area());
  } else {
    // Sides in [ceil(H/2), floor(3H/4)] keep the area at or above a quarter.
    auto side = [&](std::size_t n) {
      const std::size_t lo = (n + 1) / 2, hi = std::max(lo, 3 * n / 4);
      return lo + static_cast<std::size_t>(uniform_index(eng, hi - lo + 1));
    };
    h = side(s.grid_h);
    w = side(s.grid_w);
  }
  PlantedRegion g;
  g.row0 = static_cast<std::size_t>(uniform_index(eng, s.grid_h - h + 1));
  g.col0 = static_cast<std::size_t>(uniform_index(eng, s.grid_w - w + 1));
  g.row1 = g.row0 + h;
  g.col1 = g.col0 + w;
  return g;
}

}  // namespace detail

// All randomness comes from named substreams of spec.seed: "directions",
// "labels" (per split and finding), "regions" (per split), and per image
// "embeddings", "decoys", "contrast" and "survival".
inline SyntheticDataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t M = spec.findings.size(), dm = spec.d_model(), d = spec.d_layer;
  const std::size_t H = spec.grid_h, W = spec.grid_w, N = spec.n_patches();

  std::vector<std::vector<double>> dirs(M + 1, std::vector<double>(dm));
  {
    Engine eng = substream(spec.seed, "directions");
    for (auto& v : dirs) {
      double norm = 0.0;
      for (double& x : v) {
        x = normal01(eng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
  }
  const std::vector<double>& offset_dir = dirs[M];

  SyntheticDataset ds;
  ds.findings = spec.finding_names();
  ds.labels.findings = ds.findings;

  const std::size_t sizes[3] = {spec.n_train, spec.n_val, spec.n_test};
  std::vector<EmbeddingRecord>* outs[3] = {&ds.train, &ds.val, &ds.test};
  std::uint64_t next_id = 1;
  for (std::size_t split = 0; split < 3; ++split) {
    const std::size_t n = sizes[split];
    std::vector<std::vector<std::uint8_t>> y(M);
    for (std::size_t m = 0; m < M; ++m) {
      Engine eng = substream(spec.seed, "labels", split * M + m);
      y[m] = detail::draw_labels(n, spec.findings[m].prevalence, eng);
    }
    Engine region_eng = substream(spec.seed, "regions", split);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t id = next_id++;
      Engine eng = substream(spec.seed, "embeddings", id);
      Tensor patches({H, W, dm});
      Tensor cls({dm});
      for (double& x : patches.data()) x = spec.noise * normal01(eng);
      for (double& x : cls.data()) x = spec.noise * normal01(eng);

      double global_load = 0.0;
      Engine decoy_eng = substream(spec.seed, "decoys", id);
      for (std::size_t m = 0; m < M; ++m) {
        ds.labels.values.push_back(y[m][i]);
        const FindingSpec& f = spec.findings[m];
        const std::vector<double>& u = dirs[m];
        if (!y[m][i]) {
          if (f.kind == SignalKind::diffuse && spec.diffuse_decoys) {
            const std::size_t area = detail::draw_region(spec, f.kind, decoy_eng).area();
            std::vector<std::size_t> cells(N);
            std::iota(cells.begin(), cells.end(), std::size_t{0});
            for (std::size_t j = 0; j < area; ++j) {
              std::swap(cells[j], cells[j + static_cast<std::size_t>(uniform_index(decoy_eng, N - j))]);
              double* cell = patches.data().data() + cells[j] * dm;
              for (std::size_t k = 0; k < dm; ++k) cell[k] += f.amplitude * u[k];
            }
            const double leak = f.amplitude * static_cast<double>(area) / static_cast<double>(N);
            for (std::size_t c = 0; c < dm; ++c) cls[c] += leak * u[c];
          }
          continue;
        }
        if (f.kind == SignalKind::global) {
          for (std::size_t c = 0; c < dm; ++c) cls[c] += f.amplitude * u[c];
          global_load += f.amplitude;
          continue;
        }
        PlantedRegion g = detail::draw_region(spec, f.kind, region_eng);
        g.image_id = id;
        g.finding = m;
        for (std::size_t r = g.row0; r < g.row1; ++r) {
          for (std::size_t c = g.col0; c < g.col1; ++c) {
            double* cell = patches.data().data() + (r * W + c) * dm;
            for (std::size_t k = 0; k < dm; ++k) cell[k] += f.amplitude * u[k];
          }
        }
        // The summary token sees the region's share of the image.
        const double leak = f.amplitude * static_cast<double>(g.area()) / static_cast<double>(N);
        for (std::size_t c = 0; c < dm; ++c) cls[c] += leak * u[c];
        ds.regions.push_back(g);
      }
      ds.labels.image_ids.push_back(id);

      if (spec.contrast_spread > 0.0 || spec.contrast_offset != 0.0) {
        Engine ceng = substream(spec.seed, "contrast", id);
        const double gain = std::exp(uniform(ceng, -spec.contrast_spread, spec.contrast_spread));
        for (std::size_t p = 0; p < N; ++p) {
          double* cell = patches.data().data() + p * dm;
          for (std::size_t k = 0; k < dm; ++k) cell[k] = gain * (cell[k] + spec.contrast_offset * offset_dir[k]);
        }
        for (std::size_t k = 0; k < dm; ++k) cls[k] = gain * (cls[k] + spec.contrast_offset * offset_dir[k]);
      }

      EmbeddingRecord rec;
      rec.image_id = id;
      for (std::size_t l = 0; l < spec.n_layers; ++l) {
        LayerBlock b{Tensor({d}), Tensor({H, W, d})};
        for (std::size_t k = 0; k < d; ++k) b.cls[k] = detail::round_f32(cls[l * d + k]);
        for (std::size_t p = 0; p < N; ++p) {
          for (std::size_t k = 0; k < d; ++k) {
            b.patches[p * d + k] = detail::round_f32(patches[p * dm + l * d + k]);
          }
        }
        rec.layers.push_back(std::move(b));
      }
      outs[split]->push_back(std::move(rec));

      Engine seng = substream(spec.seed, "survival", id);
      const double hazard = spec.base_hazard * std::exp(spec.hazard_beta * global_load);
      const double t_event = -std::log(1.0 - uniform01(seng)) / hazard;
      const double t_censor = uniform(seng, spec.censor_min_days, spec.censor_max_days);
      SurvivalRecord sr;
      sr.subject_id = id;
      sr.event = t_event <= t_censor;
      sr.time = std::max(1.0, std::ceil(std::min(t_event, t_censor)));
      ds.survival.push_back(sr);
    }
  }
  return ds;
}

inline constexpr const char* kSplitNames[3] = {"train", "val", "test"};

inline std::vector<std::string> dataset_file_names() {
  return {"train.glre", "val.glre", "test.glre", "labels.csv", "survival.csv", "regions.csv"};
}

inline void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_store(dir / "train.glre", ds.train);
  write_store(dir / "val.glre", ds.val);
  write_store(dir / "test.glre", ds.test);
  write_text_file(dir / "labels.csv", format_labels(ds.labels));
  write_text_file(dir / "survival.csv", format_survival(ds.survival));
  write_text_file(dir / "regions.csv", format_regions(ds.regions, ds.findings));
}

// Finding names from the labels.csv header.
inline std::vector<std::string> read_label_header(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const std::string first = text.substr(0, text.find('\n'));
  const auto cells = detail::split_csv_line(first);
  if (cells.size() < 2 || cells[0] != "image_id") {
    throw FormatError(path.string() + ": header must start with image_id and name at least one finding");
  }
  return {cells.begin() + 1, cells.end()};
}

struct DataDir {
  std::filesystem::path root;
  std::vector<std::string> findings;
  LabelTable labels;

  Split load(const std::string& split) const {
    return align_labels(read_store(root / (split + ".glre")), labels);
  }
  StoreHeader header(const std::string& split) const {
    return read_store_header(root / (split + ".glre"));
  }
  std::vector<SurvivalRecord> survival() const { return read_survival(root / "survival.csv"); }
  std::vector<PlantedRegion> regions() const {
    return parse_regions(read_text_file(root / "regions.csv"), findings,
                         (root / "regions.csv").string());
  }
};

inline DataDir open_data_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  DataDir d;
  d.root = dir;
  d.findings = read_label_header(dir / "labels.csv");
  d.labels = read_labels(dir / "labels.csv", d.findings);
  return d;
}

// Model config matching a store's extents.
inline GLoRIConfig config_for(const StoreHeader& h, std::size_t n_findings) {
  GLoRIConfig c;
  c.n_findings = n_findings;
  c.n_layers = h.n_layers;
  c.grid_h = h.grid_h;
  c.grid_w = h.grid_w;
  c.d_layer = h.d_layer;
  return c;
}

}  // namespace glori
