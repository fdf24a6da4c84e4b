#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#ifndef GLORI_CLI
#error "GLORI_CLI must name the glori executable"
#endif

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "glori_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "cd '" + work().string() + "' && '" GLORI_CLI "' " + args + " >>cli.out 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(work() / p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(work() / p, std::ios::binary) << text; }

const char* kSpec = R"({"n_train": 96, "n_val": 48, "n_test": 48, "grid_h": 8, "grid_w": 8,
  "n_layers": 2, "d_layer": 4, "seed": 5,
  "findings": [{"name": "spot", "kind": "focal", "prevalence": 0.3, "amplitude": 12},
               {"name": "haze", "kind": "diffuse", "prevalence": 0.25, "amplitude": 1},
               {"name": "whole", "kind": "global", "prevalence": 0.2, "amplitude": 2}]})";

const char* kHead = "--d-glori 8 --heads 2 --temp-hidden 8";

// One shared dataset and pair of checkpoints for the read-only commands.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    write("spec.json", kSpec);
    ASSERT_EQ(run("gen-synth --spec spec.json --out data"), 0);
    ASSERT_EQ(run("train --head linear --data data --epochs 2 --out m/linear.glrm"), 0);
    ASSERT_EQ(run(std::string("train --head glori --data data --epochs 2 --out m/glori.glrm ") + kHead), 0);
  }
};

}  // namespace

TEST_F(Cli, GenSynthWritesSixFilesAndManifest) {
  for (const char* f : {"train.glre", "val.glre", "test.glre", "labels.csv", "survival.csv", "regions.csv",
                        "manifest.json"}) {
    EXPECT_TRUE(fs::exists(work() / "data" / f)) << f;
  }
  const auto m = nlohmann::json::parse(slurp("data/manifest.json"));
  EXPECT_EQ(m["outputs"].size(), 6u);
  EXPECT_EQ(m["command"], "gen-synth");
  EXPECT_EQ(m["config"]["seed"], 5);
}

TEST_F(Cli, GenSynthRepeatGivesIdenticalDigests) {
  ASSERT_EQ(run("gen-synth --spec spec.json --out data2"), 0);
  const auto a = nlohmann::json::parse(slurp("data/manifest.json"));
  const auto b = nlohmann::json::parse(slurp("data2/manifest.json"));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a["outputs"][i]["sha256"], b["outputs"][i]["sha256"]);
  ASSERT_EQ(run("gen-synth --spec spec.json --seed 6 --out data3"), 0);
  const auto c = nlohmann::json::parse(slurp("data3/manifest.json"));
  EXPECT_NE(a["outputs"][0]["sha256"], c["outputs"][0]["sha256"]);
}

TEST_F(Cli, GenSynthBadSpecIsUsageError) {
  write("bad.json", "{ not json");
  EXPECT_EQ(run("gen-synth --spec bad.json --out nope"), 1);
  write("bad2.json", R"({"unknown_key": 1})");
  EXPECT_EQ(run("gen-synth --spec bad2.json --out nope"), 1);
  EXPECT_EQ(run("gen-synth --spec missing.json --out nope"), 2);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --data data"), 1);
  EXPECT_EQ(run("train --data data --out x --lr 1e-3 --lr-search"), 1);
  EXPECT_EQ(run("train --head mlp --data data --out x"), 1);
  EXPECT_EQ(run("train --data data --out x --epochs 0"), 1);
  EXPECT_EQ(run("train --data data --out x --d-glori 10 --heads 4"), 1);
  EXPECT_EQ(run("--version"), 0);
}

TEST_F(Cli, TrainWritesCheckpointLogAndManifest) {
  EXPECT_TRUE(fs::exists(work() / "m/glori.glrm"));
  const std::string log = slurp("m/glori.glrm.log");
  EXPECT_NE(log.find("epoch 2 train_loss"), std::string::npos);
  const auto m = nlohmann::json::parse(slurp("m/glori.glrm.manifest.json"));
  EXPECT_EQ(m["config"]["head"], "glori");
  EXPECT_EQ(m["config"]["d_glori"], 8);
}

TEST_F(Cli, TrainMissingDataIsIoError) {
  EXPECT_EQ(run("train --data no_such_dir --out x.glrm"), 2);
}

TEST_F(Cli, LrSearchLogsGridAndSelection) {
  ASSERT_EQ(run("train --head linear --data data --epochs 1 --lr-search --out m/search.glrm"), 0);
  const std::string log = slurp("m/search.glrm.log");
  std::size_t points = 0;
  for (std::size_t p = log.find("grid lr "); p != std::string::npos; p = log.find("grid lr ", p + 1)) ++points;
  EXPECT_EQ(points, 9u);
  for (const char* lr : {"1e-05", "2e-05", "5e-05", "0.0001", "0.0002", "0.0005", "0.001", "0.002", "0.005"}) {
    EXPECT_NE(log.find(std::string("grid lr ") + lr + " "), std::string::npos) << lr;
  }
  EXPECT_NE(log.find("selected lr "), std::string::npos);
  EXPECT_NE(log.find("retrain on train+val"), std::string::npos);
}

TEST_F(Cli, EvalSameCheckpointGivesPOne) {
  ASSERT_EQ(run("eval --ckpt m/glori.glrm --compare-ckpt m/glori.glrm --data data --out ev_same "
                "--bootstrap 30 --permutations 30"),
            0);
  const auto r = nlohmann::json::parse(slurp("ev_same/report.json"));
  EXPECT_EQ(r["comparison"]["p_macro_auroc"], 1.0);
  EXPECT_EQ(r["comparison"]["p_macro_auprc"], 1.0);
  for (const auto& f : r["findings"]) {
    EXPECT_EQ(f["p_auroc"], 1.0);
    EXPECT_EQ(f["p_auprc"], 1.0);
  }
}

TEST_F(Cli, EvalIsByteReproducible) {
  const std::string args = " --data data --bootstrap 40 --permutations 40 --seed 3 --ckpt m/glori.glrm "
                           "--compare-ckpt m/linear.glrm";
  ASSERT_EQ(run("eval --out ev1" + args), 0);
  ASSERT_EQ(run("eval --out ev2 --jobs 2" + args), 0);
  EXPECT_EQ(slurp("ev1/report.json"), slurp("ev2/report.json"));
  EXPECT_EQ(slurp("ev1/report.csv"), slurp("ev2/report.csv"));
  const auto r = nlohmann::json::parse(slurp("ev1/report.json"));
  EXPECT_EQ(r["findings"].size(), 3u);
  EXPECT_EQ(r["bootstrap"], 40);
}

TEST_F(Cli, EvalRejectsMismatchedData) {
  write("spec4.json", R"({"n_train": 16, "n_val": 16, "n_test": 16, "grid_h": 8, "grid_w": 8,
    "n_layers": 2, "d_layer": 5, "findings": [{"name": "spot", "kind": "focal", "prevalence": 0.3, "amplitude": 1},
    {"name": "haze", "kind": "diffuse", "prevalence": 0.25, "amplitude": 1},
    {"name": "whole", "kind": "global", "prevalence": 0.2, "amplitude": 2}]})");
  ASSERT_EQ(run("gen-synth --spec spec4.json --out data4"), 0);
  EXPECT_EQ(run("eval --ckpt m/linear.glrm --data data4 --out ev4 --bootstrap 5"), 2);
  write("junk.glrm", "GLRMjunk");
  EXPECT_EQ(run("eval --ckpt junk.glrm --data data --out ev5 --bootstrap 5"), 2);
}

TEST_F(Cli, AttnMapsWritesPgmAndCsv) {
  ASSERT_EQ(run("attn-maps --ckpt m/glori.glrm --data data --image-id 150 --finding spot --out maps/a"), 0);
  const std::string pgm = slurp("maps/a.pgm");
  ASSERT_EQ(pgm.rfind("P5\n8 8\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n8 8\n255\n").size() + 64);
  const std::string csv = slurp("maps/a.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_EQ(run("attn-maps --ckpt m/glori.glrm --data data --image-id 150 --finding spot --branch coarse "
                "--out maps/b"),
            0);
  EXPECT_EQ(run("attn-maps --ckpt m/linear.glrm --data data --image-id 150 --finding spot --out maps/c"), 1);
  EXPECT_EQ(run("attn-maps --ckpt m/glori.glrm --data data --image-id 99999 --finding spot --out maps/d"), 1);
  EXPECT_EQ(run("attn-maps --ckpt m/glori.glrm --data data --image-id 150 --finding nope --out maps/e"), 1);
}

TEST_F(Cli, KmWritesCurvesAndLogRank) {
  ASSERT_EQ(run("km --ckpt m/linear.glrm --data data --out km"), 0);
  const std::string csv = slurp("km/km.csv");
  EXPECT_EQ(csv.rfind("t,S_low,S_high\n0,1,1\n", 0), 0u);
  const auto j = nlohmann::json::parse(slurp("km/logrank.json"));
  EXPECT_EQ(j["n_low"].get<int>() + j["n_high"].get<int>(), 48);
  EXPECT_GE(j["log_rank"]["p_value"].get<double>(), 0.0);
  EXPECT_LE(j["log_rank"]["p_value"].get<double>(), 1.0);
}

TEST_F(Cli, KmWithoutEventsIsNumericError) {
  std::string text = "image_id,time_days,event\n";
  for (int id = 1; id <= 192; ++id) text += std::to_string(id) + ",100,0\n";
  write("noevents.csv", text);
  EXPECT_EQ(run("km --ckpt m/linear.glrm --data data --survival noevents.csv --out km0"), 3);
  const auto j = nlohmann::json::parse(slurp("km0/logrank.json"));
  EXPECT_TRUE(j["log_rank"].is_null());
}
