#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pneunet/checkpoint.h"
#include "pneunet/image.h"
#include "pneunet/model.h"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = "SOURCE_DATE_EPOCH=0 " + std::string(PNEUNET_CLI) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

// stdout may hold the config echo followed by the command's own JSON.
std::vector<nlohmann::json> json_docs(const std::string& text) {
  std::vector<nlohmann::json> docs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '{') docs.push_back(nlohmann::json::parse(line));
  }
  return docs;
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "pneunet_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string d(const std::string& sub) { return (dir_ / sub).string(); }
  static fs::path dir_;
};

fs::path CliPipeline::dir_;

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
  EXPECT_EQ(run("no-such-command").code, 3);
  EXPECT_EQ(run("train").code, 3);
}

TEST(Cli, PrintDefaultConfig) {
  const CliRun r = run("config --print-default");
  ASSERT_EQ(r.code, 0);
  const auto cfg = nlohmann::json::parse(r.out);
  EXPECT_EQ(cfg["train"]["batch_size"], 16);
  EXPECT_EQ(cfg["train"]["optimizer"]["learning_rate"], 1e-3);
  EXPECT_EQ(cfg["model"]["threshold"], 0.5);
}

TEST(Cli, MissingFilesExitTwo) {
  EXPECT_EQ(run("predict --checkpoint /nonexistent.ckpt --image /nonexistent.png").code, 2);
  EXPECT_EQ(run("scan --data /nonexistent/dir").code, 2);
}

TEST_F(CliPipeline, PredictMatchesServiceGolden) {
  const fs::path data = PNEUNET_TEST_DATA;
  const CliRun r = run("predict --checkpoint " + (data / "fixture.ckpt").string() + " --image " +
                       (data / "sample.pgm").string());
  ASSERT_EQ(r.code, 0);
  const auto docs = json_docs(r.out);
  ASSERT_EQ(docs.size(), 1u);
  std::ifstream f(data / "expected_prediction.json");
  const auto golden = nlohmann::json::parse(f);
  EXPECT_EQ(docs[0]["probability"], golden["probability"]);
  EXPECT_EQ(docs[0]["label"], golden["label"]);
}

TEST_F(CliPipeline, ZeroWeightModelEvaluatesToOneHalf) {
  pneunet::ModelConfig c;
  c.channels = 1;
  c.height = c.width = 32;
  c.base_channels = 4;
  c.head_units = 8;
  pneunet::ModelGraph m = pneunet::build_model(c, 1);
  for (float& w : m.mutable_parameter("head_out.weight").mutable_data()) w = 0.0f;
  pneunet::save_checkpoint(m, d("zero.ckpt"));
  for (const char* split : {"train", "test", "val"}) {
    for (const char* cls : {"NORMAL", "PNEUMONIA"}) fs::create_directories(fs::path(d("four")) / split / cls);
  }
  for (int i = 0; i < 4; ++i) {
    const char* cls = i % 2 ? "PNEUMONIA" : "NORMAL";
    pneunet::write_image(fs::path(d("four")) / "test" / cls / (std::to_string(i) + ".pgm"),
                         pneunet::ImageBuffer(20, 20, 1, static_cast<std::uint8_t>(40 * i)));
  }
  ASSERT_EQ(run("evaluate --checkpoint " + d("zero.ckpt") + " --data " + d("four") + " --split test --out-dir " +
                d("four_eval"))
                .code,
            0);
  std::ifstream rep(d("four_eval/report.json"));
  const auto report = nlohmann::json::parse(rep);
  EXPECT_EQ(report["n"], 4);
  // Every score is 0.5, so the curve is the diagonal.
  EXPECT_EQ(report["auc"], 0.5);
  const std::string roc = [&] {
    std::ifstream f(d("four_eval/roc.csv"));
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }();
  EXPECT_NE(roc.find("0.500000\n"), std::string::npos);
}

TEST_F(CliPipeline, PlotThreeRowHistory) {
  std::ofstream(d("h3.csv")) << "epoch,train_loss,train_acc,val_loss,val_acc\n"
                                "1,0.900000,0.500000,0.950000,0.500000\n"
                                "2,0.700000,0.700000,0.800000,0.600000\n"
                                "3,0.500000,0.800000,0.700000,0.700000\n";
  ASSERT_EQ(run("plot --history " + d("h3.csv") + " --out-dir " + d("h3plots")).code, 0);
  std::ifstream f(d("h3plots/loss.svg"));
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string svg = ss.str();
  std::size_t n = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++n;
  EXPECT_EQ(n, 2u);
}

TEST_F(CliPipeline, EndToEnd) {
  ASSERT_EQ(run("synth --out-dir " + d("data") + " --seed 3 --train 40 --test 20 --val 10").code, 0);
  const CliRun scan = run("scan --data " + d("data"));
  ASSERT_EQ(scan.code, 0);
  EXPECT_NE(scan.out.find("\"train\""), std::string::npos);

  ASSERT_EQ(run("pretrain --out-dir " + d("pre") + " --samples 60 --epochs 1 --image-size 32 --seed 1").code, 0);
  ASSERT_TRUE(fs::exists(d("pre/backbone.ckpt")));

  EXPECT_EQ(run("train --data " + d("data") + " --out-dir " + d("run") + " --epochs 0 --image-size 32").code, 3);
  ASSERT_EQ(run("train --data " + d("data") + " --backbone " + d("pre/backbone.ckpt") + " --out-dir " +
                d("run") + " --epochs 2 --image-size 32 --seed 1")
                .code,
            0);
  for (const char* f : {"model.ckpt", "best.ckpt", "history.csv"}) EXPECT_TRUE(fs::exists(d("run/") + f)) << f;

  ASSERT_EQ(run("evaluate --checkpoint " + d("run/model.ckpt") + " --data " + d("data") + " --split test --out-dir " +
                d("eval"))
                .code,
            0);
  std::ifstream rep(d("eval/report.json"));
  const auto report = nlohmann::json::parse(rep);
  EXPECT_EQ(report["n"], 20);
  EXPECT_TRUE(fs::exists(d("eval/roc.csv")));

  const std::string image = (fs::path(d("data")) / "test" / "PNEUMONIA").string();
  const fs::path first = *fs::directory_iterator(image);
  const CliRun pred = run("predict --checkpoint " + d("run/model.ckpt") + " --image " + first.string() + " --always-cam");
  ASSERT_EQ(pred.code, 0);
  const auto docs = json_docs(pred.out);
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_TRUE(docs[0].contains("probability"));
  EXPECT_TRUE(docs[0].contains("heatmap_png"));

  ASSERT_EQ(run("cam --checkpoint " + d("run/model.ckpt") + " --image " + first.string() + " --grid-csv --out-dir " +
                d("cam"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(d("cam/") + first.stem().string() + "_cam.png"));
  EXPECT_TRUE(fs::exists(d("cam/") + first.stem().string() + "_cam.csv"));

  ASSERT_EQ(run("plot --history " + d("run/history.csv") + " --roc " + d("eval/roc.csv") + " --out-dir " + d("plots"))
                .code,
            0);
  for (const char* f : {"loss.svg", "accuracy.svg", "roc.svg"}) EXPECT_TRUE(fs::exists(d("plots/") + f)) << f;
}
