// glori: synthetic data generation, head training, evaluation, attention
// maps and survival curves.
//
// Exit codes: 0 success, 1 usage, 2 data/format/io, 3 numeric failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "glori/glori.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw glori::IoError("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

std::string file_digest(const fs::path& p) { return sha256_hex(glori::read_file_bytes(p)); }

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One manifest per artifact-producing command. Only "wall_clock" varies
// between identical runs.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed)
      : start_(std::chrono::steady_clock::now()), started_(utc_now()) {
    j_["command"] = std::move(command);
    j_["tool_version"] = glori::kVersion;
    j_["seed"] = seed;
    j_["config"] = ordered_json::object();
    j_["inputs"] = ordered_json::array();
    j_["outputs"] = ordered_json::array();
  }

  ordered_json& config() { return j_["config"]; }
  ordered_json& root() { return j_; }

  void input(const fs::path& p) { j_["inputs"].push_back(entry(p)); }
  void output(const fs::path& p) { j_["outputs"].push_back(entry(p)); }

  void write(const fs::path& path) {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j_["wall_clock"] = {{"started_utc", started_}, {"elapsed_seconds", elapsed}};
    glori::write_text_file(path, j_.dump(2) + "\n");
  }

 private:
  static ordered_json entry(const fs::path& p) {
    return {{"path", p.string()}, {"sha256", file_digest(p)}};
  }
  std::chrono::steady_clock::time_point start_;
  std::string started_;
  ordered_json j_;
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw glori::IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
  }
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw glori::IoError("cannot create " + p.string() + ": " + ec.message());
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

void add_store_inputs(Manifest& man, const fs::path& data, std::initializer_list<const char*> splits) {
  for (const char* s : splits) man.input(data / (std::string(s) + ".glre"));
  man.input(data / "labels.csv");
}

// Checkpoint and data directory must agree on extents and finding names.
void check_compatible(const glori::Checkpoint& ck, const glori::DataDir& data, const std::string& split) {
  const glori::StoreHeader h = data.header(split);
  const glori::GLoRIConfig& c = ck.model.config;
  if (h.n_layers != c.n_layers || h.grid_h != c.grid_h || h.grid_w != c.grid_w ||
      h.d_layer != c.d_layer) {
    throw glori::FormatError("checkpoint config does not match the " + split + " store extents");
  }
  if (!ck.findings.empty() && ck.findings != data.findings) {
    throw glori::FormatError("checkpoint findings do not match labels.csv");
  }
  if (data.findings.size() != c.n_findings) {
    throw glori::FormatError("checkpoint has " + std::to_string(c.n_findings) +
                             " findings, labels.csv has " + std::to_string(data.findings.size()));
  }
}

std::size_t finding_index(const std::vector<std::string>& findings, const std::string& name) {
  for (std::size_t i = 0; i < findings.size(); ++i) {
    if (findings[i] == name) return i;
  }
  throw glori::UsageError("unknown finding '" + name + "'");
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string spec_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_gen_synth(const GenSynthArgs& a) {
  glori::SyntheticSpec spec = glori::default_synthetic_spec();
  if (!a.spec_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(glori::read_text_file(a.spec_path));
    } catch (const nlohmann::json::exception& e) {
      throw glori::UsageError("spec " + a.spec_path + ": " + e.what());
    }
    spec = glori::spec_from_json(j);
  }
  if (a.seed) spec.seed = *a.seed;
  spec.validate();

  Manifest man("gen-synth", spec.seed);
  if (!a.spec_path.empty()) man.input(a.spec_path);
  const fs::path out = a.out;
  const glori::SyntheticDataset ds = glori::gen_synthetic(spec);
  glori::write_dataset(out, ds);
  man.config() = glori::to_json(spec);
  man.root()["findings"] = ds.findings;
  ordered_json splits;
  for (const char* s : glori::kSplitNames) splits[s] = std::string(s) + ".glre";
  man.root()["splits"] = splits;
  for (const auto& f : glori::dataset_file_names()) man.output(out / f);
  man.write(out / "manifest.json");
  std::cout << "wrote " << glori::dataset_file_names().size() << " files and manifest.json to "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string head = "glori";
  std::string data;
  std::string out;
  std::size_t epochs = 10;
  double lr = 5e-3;
  bool lr_search = false;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  std::size_t d_glori = 768;
  std::size_t heads = 8;
  std::size_t temp_hidden = 256;
  bool no_global = false;
  bool no_temperature = false;
  bool no_pyramid = false;
  std::string selection = "auroc";
  std::size_t jobs = 1;
};

int run_train(const TrainArgs& a) {
  const glori::HeadKind kind = glori::parse_head_kind(a.head);
  const glori::DataDir data = glori::open_data_dir(a.data);
  glori::GLoRIConfig cfg = glori::config_for(data.header("train"), data.findings.size());
  cfg.d_glori = a.d_glori;
  cfg.heads = a.heads;
  cfg.temp_hidden = a.temp_hidden;
  cfg.use_global = !a.no_global;
  cfg.use_adaptive_temperature = !a.no_temperature;
  cfg.use_pyramid = !a.no_pyramid;
  cfg.seed = a.seed;
  cfg.validate(kind);

  glori::TrainConfig tc;
  tc.lr = a.lr;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.seed = a.seed;
  tc.weight_decay = a.weight_decay;
  tc.jobs = a.jobs;
  if (a.selection == "auroc") {
    tc.selection_metric = glori::Metric::auroc;
  } else if (a.selection == "auprc") {
    tc.selection_metric = glori::Metric::auprc;
  } else {
    throw glori::UsageError("--selection must be auroc or auprc");
  }
  tc.validate();

  const glori::Split train_split = data.load("train");
  const glori::Split val_split = data.load("val");
  const glori::DataView train_view(train_split), val_view(val_split);

  const fs::path out = a.out;
  ensure_parent(out);
  const fs::path log_path = sibling(out, ".log");
  std::ostringstream log;
  log << "head " << glori::to_string(kind) << " train " << train_view.size() << " val "
      << val_view.size() << "\n";

  glori::TrainResult result;
  if (a.lr_search) {
    const glori::GridResult grid = glori::lr_grid_search(kind, cfg, train_view, val_view, tc, &log);
    tc.lr = grid.best_lr;
    log << "retrain on train+val at lr " << grid.best_lr << "\n";
    result = glori::retrain_on_train_plus_val(kind, cfg, train_view, val_view, grid.best_lr, tc, &log);
  } else {
    result = glori::train(kind, cfg, train_view, &val_view, tc, &log);
  }

  glori::Checkpoint ck{std::move(result.model), data.findings, tc.provenance()};
  glori::write_checkpoint(out, ck);
  glori::write_text_file(log_path, log.str());
  std::cout << log.str();

  Manifest man("train", a.seed);
  add_store_inputs(man, a.data, {"train", "val"});
  auto& c = man.config();
  c["head"] = glori::to_string(kind);
  c["epochs"] = a.epochs;
  c["lr"] = a.lr_search ? nullptr : ordered_json(a.lr);
  c["lr_search"] = a.lr_search;
  c["lr_grid"] = tc.lr_grid;
  c["selected_lr"] = tc.lr;
  c["batch_size"] = a.batch_size;
  c["weight_decay"] = a.weight_decay;
  c["beta1"] = tc.beta1;
  c["beta2"] = tc.beta2;
  c["adam_eps"] = tc.eps;
  c["selection_metric"] = a.selection;
  c["d_glori"] = cfg.d_glori;
  c["heads"] = cfg.heads;
  c["temp_hidden"] = cfg.temp_hidden;
  c["use_global"] = cfg.use_global;
  c["use_adaptive_temperature"] = cfg.use_adaptive_temperature;
  c["use_pyramid"] = cfg.use_pyramid;
  man.output(out);
  man.output(log_path);
  man.write(sibling(out, ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string compare_ckpt;
  std::string data;
  std::string split = "test";
  std::string out;
  std::size_t bootstrap = 1000;
  std::size_t permutations = 1000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

int run_eval(const EvalArgs& a) {
  const glori::DataDir data = glori::open_data_dir(a.data);
  const glori::Checkpoint ck = glori::read_checkpoint(a.ckpt);
  check_compatible(ck, data, a.split);
  std::optional<glori::Checkpoint> other;
  if (!a.compare_ckpt.empty()) {
    other = glori::read_checkpoint(a.compare_ckpt);
    check_compatible(*other, data, a.split);
  }
  const glori::Split split = data.load(a.split);
  const glori::DataView view(split);

  glori::ReportOptions opt;
  opt.bootstrap = a.bootstrap;
  opt.permutations = a.permutations;
  opt.seed = a.seed;
  opt.jobs = a.jobs;
  const glori::ScoreMatrix sa = glori::score_matrix(ck.model, view);
  std::optional<glori::ScoreMatrix> sb;
  if (other) sb = glori::score_matrix(other->model, view);
  const glori::MetricsReport report =
      glori::build_report(fs::path(a.ckpt).filename().string(), sa, data.findings, opt,
                          sb ? &*sb : nullptr,
                          other ? fs::path(a.compare_ckpt).filename().string() : "");

  const fs::path out = a.out;
  ensure_dir(out);
  glori::write_text_file(out / "report.json", glori::report_json_text(report));
  glori::write_text_file(out / "report.csv", glori::report_csv(report));

  Manifest man("eval", a.seed);
  man.input(a.ckpt);
  if (other) man.input(a.compare_ckpt);
  add_store_inputs(man, a.data, {});
  man.input(fs::path(a.data) / (a.split + ".glre"));
  auto& c = man.config();
  c["split"] = a.split;
  c["bootstrap"] = a.bootstrap;
  c["permutations"] = a.permutations;
  c["jobs"] = a.jobs;
  man.output(out / "report.json");
  man.output(out / "report.csv");
  man.write(out / "manifest.json");

  std::printf("macro AUROC %.4f [%.4f, %.4f]  macro AUPRC %.4f [%.4f, %.4f]\n",
              report.macro_auroc.observed, report.macro_auroc.lo95, report.macro_auroc.hi95,
              report.macro_auprc.observed, report.macro_auprc.lo95, report.macro_auprc.hi95);
  if (report.comparison) {
    const auto& cmp = *report.comparison;
    std::printf("vs %s: delta AUROC %+.4f (p=%.4f)  delta AUPRC %+.4f (p=%.4f)\n",
                cmp.model.c_str(), cmp.delta_macro_auroc, cmp.p_macro_auroc, cmp.delta_macro_auprc,
                cmp.p_macro_auprc);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct AttnArgs {
  std::string ckpt;
  std::string data;
  std::uint64_t image_id = 0;
  std::string finding;
  std::string branch = "fine";
  std::string out;
};

std::string grid_csv(const glori::Tensor& g) {
  std::string s;
  for (std::size_t r = 0; r < g.dim(0); ++r) {
    for (std::size_t c = 0; c < g.dim(1); ++c) {
      if (c) s += ',';
      s += glori::detail::format_double(g.at(r, c));
    }
    s += '\n';
  }
  return s;
}

// Binary P5, min-max normalized to 0..255; a flat map is all zeros.
std::vector<std::uint8_t> grid_pgm(const glori::Tensor& g) {
  const std::string header =
      "P5\n" + std::to_string(g.dim(1)) + " " + std::to_string(g.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  double lo = g[0], hi = g[0];
  for (double v : g.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : g.data()) {
    const double x = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * x)));
  }
  return out;
}

int run_attn_maps(const AttnArgs& a) {
  const glori::DataDir data = glori::open_data_dir(a.data);
  const glori::Checkpoint ck = glori::read_checkpoint(a.ckpt);
  const std::size_t m = finding_index(data.findings, a.finding);
  glori::Branch branch;
  if (a.branch == "fine") {
    branch = glori::Branch::fine;
  } else if (a.branch == "coarse") {
    branch = glori::Branch::coarse;
  } else {
    throw glori::UsageError("--branch must be fine or coarse");
  }
  std::optional<glori::EmbeddingRecord> rec;
  std::string found_in;
  for (const char* s : glori::kSplitNames) {
    check_compatible(ck, data, s);
    for (auto& r : glori::read_store(data.root / (std::string(s) + ".glre"))) {
      if (r.image_id == a.image_id) {
        rec = std::move(r);
        found_in = s;
        break;
      }
    }
    if (rec) break;
  }
  if (!rec) throw glori::UsageError("image_id " + std::to_string(a.image_id) + " not found in any split");
  const glori::Tensor grid = glori::attention_map(ck.model, *rec, m, branch);

  const fs::path out = a.out;
  ensure_parent(out);
  const fs::path pgm = sibling(out, ".pgm"), csv = sibling(out, ".csv");
  glori::write_file_bytes(pgm, grid_pgm(grid));
  glori::write_text_file(csv, grid_csv(grid));

  Manifest man("attn-maps", 0);
  man.input(a.ckpt);
  man.input(data.root / (found_in + ".glre"));
  auto& c = man.config();
  c["image_id"] = a.image_id;
  c["finding"] = a.finding;
  c["branch"] = a.branch;
  c["split"] = found_in;
  man.output(pgm);
  man.output(csv);
  man.write(sibling(out, ".manifest.json"));
  std::cout << "wrote " << pgm.string() << " and " << csv.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct KmArgs {
  std::string ckpt;
  std::string data;
  std::string survival;
  std::string split = "test";
  std::string finding;
  double quantile = 0.5;
  std::string out;
};

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

int run_km(const KmArgs& a) {
  const glori::DataDir data = glori::open_data_dir(a.data);
  const glori::Checkpoint ck = glori::read_checkpoint(a.ckpt);
  check_compatible(ck, data, a.split);
  const fs::path surv_path = a.survival.empty() ? data.root / "survival.csv" : fs::path(a.survival);
  const auto surv = glori::read_survival(surv_path);
  std::unordered_map<std::uint64_t, glori::SurvivalRecord> by_id;
  for (const auto& r : surv) by_id.emplace(r.subject_id, r);
  std::optional<std::size_t> m;
  if (!a.finding.empty()) m = finding_index(data.findings, a.finding);

  // Risk: predicted probability of one finding, or the mean over findings.
  std::vector<glori::SurvivalRecord> cohort;
  for (const auto& rec : glori::read_store(data.root / (a.split + ".glre"))) {
    const auto it = by_id.find(rec.image_id);
    if (it == by_id.end()) {
      throw glori::FormatError("image_id " + std::to_string(rec.image_id) + " missing from " +
                               surv_path.string());
    }
    const auto z = glori::predict_logits(ck.model, rec);
    double risk = 0.0;
    if (m) {
      risk = sigmoid(z[*m]);
    } else {
      for (double v : z) risk += sigmoid(v);
      risk /= static_cast<double>(z.size());
    }
    glori::SurvivalRecord r = it->second;
    r.risk_score = risk;
    cohort.push_back(r);
  }
  const glori::RiskGroups groups = glori::risk_groups(cohort, a.quantile);
  if (groups.low.empty() || groups.high.empty()) {
    throw glori::UsageError("risk split left a group empty (threshold " +
                            std::to_string(groups.threshold) + ")");
  }

  const fs::path out = a.out;
  ensure_dir(out);
  const auto km_low = glori::kaplan_meier(groups.low);
  const auto km_high = glori::kaplan_meier(groups.high);
  glori::write_text_file(out / "km.csv", glori::km_csv(km_low, km_high));

  ordered_json j;
  j["split"] = a.split;
  j["risk"] = m ? "probability:" + a.finding : std::string("mean_probability");
  j["quantile"] = a.quantile;
  j["threshold"] = groups.threshold;
  j["n_low"] = groups.low.size();
  j["n_high"] = groups.high.size();
  int status = 0;
  std::string error;
  try {
    const glori::LogRankResult lr = glori::log_rank(groups.low, groups.high);
    j["log_rank"] = {{"chi_square", lr.chi_square},
                     {"p_value", lr.p_value},
                     {"observed_low", lr.observed_a},
                     {"expected_low", lr.expected_a},
                     {"variance", lr.variance}};
  } catch (const glori::NumericError& e) {
    j["log_rank"] = nullptr;
    j["error"] = e.what();
    error = e.what();
    status = 3;
  }
  glori::write_text_file(out / "logrank.json", j.dump(2) + "\n");

  Manifest man("km", 0);
  man.input(a.ckpt);
  man.input(data.root / (a.split + ".glre"));
  man.input(surv_path);
  man.config() = {{"split", a.split}, {"finding", a.finding}, {"quantile", a.quantile}};
  man.output(out / "km.csv");
  man.output(out / "logrank.json");
  man.write(out / "manifest.json");
  if (status) {
    std::cerr << "error: " << error << "\n";
  } else {
    std::printf("low %zu high %zu  log-rank chi2 %.4f p %.3g\n", groups.low.size(),
                groups.high.size(), j["log_rank"]["chi_square"].get<double>(),
                j["log_rank"]["p_value"].get<double>());
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLoRI head probing on frozen embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(glori::kVersion));

  GenSynthArgs gen;
  auto* g = app.add_subcommand("gen-synth", "Generate a synthetic planted-signal dataset");
  g->add_option("--spec", gen.spec_path, "Generator spec (JSON); defaults to the benchmark spec");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Seed (overrides the spec)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a head");
  t->add_option("--head", tr.head, "linear or glori")->check(CLI::IsMember({"linear", "glori"}));
  t->add_option("--data", tr.data, "Data directory")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  auto* lr_opt = t->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  t->add_flag("--lr-search", tr.lr_search, "Grid search on val, then retrain on train+val")->excludes(lr_opt);
  t->add_option("--batch-size", tr.batch_size, "Minibatch size")->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  t->add_option("--weight-decay", tr.weight_decay, "AdamW weight decay")->capture_default_str();
  t->add_option("--d-glori", tr.d_glori, "GLoRI width")->capture_default_str();
  t->add_option("--heads", tr.heads, "Attention heads")->capture_default_str();
  t->add_option("--temp-hidden", tr.temp_hidden, "Temperature MLP width")->capture_default_str();
  t->add_flag("--no-global", tr.no_global, "Drop the [CLS] skip");
  t->add_flag("--no-temperature", tr.no_temperature, "Fix the fine-branch temperature at 1");
  t->add_flag("--no-pyramid", tr.no_pyramid, "Drop the coarse pyramid branch");
  t->add_option("--selection", tr.selection, "Validation metric for --lr-search (auroc|auprc)");
  t->add_option("--jobs", tr.jobs, "Concurrent grid-search runs")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint with bootstrap CIs");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--compare-ckpt", ev.compare_ckpt, "Second checkpoint for the permutation test");
  e->add_option("--data", ev.data, "Data directory")->required();
  e->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples")->capture_default_str();
  e->add_option("--permutations", ev.permutations, "Permutations")->capture_default_str();
  e->add_option("--seed", ev.seed, "Seed")->capture_default_str();
  e->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str();

  AttnArgs at;
  auto* m = app.add_subcommand("attn-maps", "Export one attention map");
  m->add_option("--ckpt", at.ckpt, "GLoRI checkpoint")->required();
  m->add_option("--data", at.data, "Data directory")->required();
  m->add_option("--image-id", at.image_id, "Image id")->required();
  m->add_option("--finding", at.finding, "Finding name")->required();
  m->add_option("--branch", at.branch, "fine or coarse")->capture_default_str();
  m->add_option("--out", at.out, "Output prefix (.pgm, .csv)")->required();

  KmArgs km;
  auto* k = app.add_subcommand("km", "Kaplan-Meier curves of model risk groups");
  k->add_option("--ckpt", km.ckpt, "Checkpoint")->required();
  k->add_option("--data", km.data, "Data directory")->required();
  k->add_option("--survival", km.survival, "Survival CSV (default <data>/survival.csv)");
  k->add_option("--split", km.split, "Cohort split")->check(CLI::IsMember({"train", "val", "test"}));
  k->add_option("--finding", km.finding, "Risk from one finding instead of the mean");
  k->add_option("--quantile", km.quantile, "Risk split quantile")->capture_default_str();
  k->add_option("--out", km.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g) return run_gen_synth(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*m) return run_attn_maps(at);
    if (*k) return run_km(km);
  } catch (const glori::UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 1;
  } catch (const glori::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const glori::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
