#include "sysid/config.hpp"
#include "sysid/io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sysid;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
};

// Runs the CLI, capturing stdout and stderr together.
CliRun cli(const std::string& args) {
  const std::string cmd = std::string(SYSID_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, ""};
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sysid_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

const char* kTinyIni =
    "[data]\nscenario = duffing_K\nsteps = 20\ndt = 0.05\n\n"
    "[train]\nlearning_rate = 1e-3\nepochs = 2\nbatch_size = 4\nlstm_hidden = 4\nflow_width = 8\nflow_layers = 2\n"
    "padding = 0\nseed = 3\n";

}  // namespace

TEST(Config, ParsesSectionsAndLists) {
  const auto rc = config::parse_ini(
      "[data]\nscenario = lorenz_rho\nn = 40\nsteps = 300\ndt = 0.02\n[train]\nlearning_rate = 1e-3\n"
      "loss_weights = 1, 0.5, 0, 2\ncnn_channels = 4,4\ndetach_phi_nll = true\n");
  EXPECT_EQ(rc.scenario, "lorenz_rho");
  EXPECT_EQ(rc.train.scenario, "lorenz_rho");
  EXPECT_EQ(rc.data.n_samples, 40u);
  EXPECT_EQ(rc.data.steps, 300u);
  EXPECT_DOUBLE_EQ(rc.data.dt, 0.02);
  EXPECT_DOUBLE_EQ(rc.train.learning_rate, 1e-3);
  EXPECT_EQ(rc.train.weights.rec_lstm, 0.5);
  EXPECT_EQ(rc.train.weights.rec_f, 2.0);
  EXPECT_EQ(rc.train.cnn_channels, (std::vector<std::size_t>{4, 4}));
  EXPECT_TRUE(rc.train.detach_phi_nll);
  EXPECT_FALSE(rc.train.detach_flow_rec_f);
}

TEST(Config, Rejections) {
  EXPECT_THROW(config::parse_ini("[train]\nlearning_rte = 1\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[model]\nx = 1\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[train]\nepochs = -3\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[train]\nlearning_rate = 0\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[train]\nloss_weights = 1,2,3\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[train]\nloss_weights = 1,-2,3,4\n"), config::ConfigError);
  EXPECT_THROW(config::parse_ini("[train]\ndetach_phi_nll = maybe\n"), config::ConfigError);
  EXPECT_THROW(config::load_ini("/nonexistent/run.ini"), config::ConfigError);
}

TEST_F(Cli, GenerateIsDeterministic) {
  const auto a = cli("generate --scenario duffing_K --n 10 --seed 7 --steps 30 --out " + path("a"));
  const auto b = cli("generate --scenario duffing_K --n 10 --seed 7 --steps 30 --out " + path("b"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  const auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out);
  EXPECT_EQ(ja["manifest_crc32"], jb["manifest_crc32"]);
  EXPECT_EQ(io::read_file(path("a/sample_3.f64")), io::read_file(path("b/sample_3.f64")));
  const auto c = cli("generate --scenario duffing_K --n 10 --seed 8 --steps 30 --out " + path("c"));
  EXPECT_NE(nlohmann::json::parse(c.out)["manifest_crc32"], ja["manifest_crc32"]);
}

TEST_F(Cli, TrainEvaluateInfer) {
  write("run.ini", kTinyIni);
  ASSERT_EQ(cli("generate --config " + path("run.ini") + " --n 12 --seed 1 --out " + path("train")).code, 0);
  ASSERT_EQ(cli("generate --config " + path("run.ini") + " --n 6 --seed 2 --out " + path("test")).code, 0);
  const auto t = cli("train --config " + path("run.ini") + " --dataset " + path("train") + " --out " + path("model") +
                     " --epochs 3 --loss-weights 1,1,1,1");
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(fs::exists(path("model/model.ckpt")));
  const auto log = io::parse_csv(io::read_file(path("model/training_log.csv")));
  EXPECT_EQ(log.size(), 5u);  // header + initial + 3 epochs

  const auto e = cli("evaluate --checkpoint " + path("model/model.ckpt") + " --dataset " + path("test") + " --out " + path("report"));
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_EQ(io::parse_csv(io::read_file(path("report/report.csv"))).size(), 7u);
  EXPECT_TRUE(fs::exists(path("report/fig6_k_predictions.dat")));
  const auto e2 = cli("evaluate --checkpoint " + path("model/model.ckpt") + " --dataset " + path("test") + " --out " + path("report2"));
  EXPECT_EQ(io::read_file(path("report/report.json")), io::read_file(path("report2/report.json")));

  const auto i = cli("infer --checkpoint " + path("model/model.ckpt") + " --input " + path("test/sample_0.f64"));
  ASSERT_EQ(i.code, 0) << i.out;
  const auto j = nlohmann::json::parse(i.out);
  EXPECT_EQ(j["scenario"], "duffing_K");
  const auto report = nlohmann::json::parse(io::read_file(path("report/report.json")));
  EXPECT_EQ(j["params"]["K"].get<double>(), report["rows"][0]["predicted"][0].get<double>());

  const auto s = cli("sweep --checkpoint " + path("model/model.ckpt") + " --dataset " + path("test") + " --out " + path("sweep"));
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_EQ(io::parse_csv(io::read_file(path("sweep/sweep.csv"))).size(), 2u);
}

TEST_F(Cli, ErrorsAreOneLineJson) {
  auto expect_error = [](const CliRun& r, const std::string& kind) {
    EXPECT_NE(r.code, 0);
    ASSERT_FALSE(r.out.empty());
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
    EXPECT_EQ(nlohmann::json::parse(r.out)["error"], kind) << r.out;
  };
  expect_error(cli("frobnicate"), "usage");
  expect_error(cli("generate --scenario nope --out " + path("x")), "scenario");
  expect_error(cli("generate --config " + path("missing.ini") + " --out " + path("x")), "config");
  write("bad.ini", "[train]\nlearning_rate = fast\n");
  expect_error(cli("generate --config " + path("bad.ini") + " --scenario duffing_K --out " + path("x")), "config");
  write("junk.ckpt", "SYSIDFLW not really a checkpoint");
  expect_error(cli("infer --checkpoint " + path("junk.ckpt") + " --input " + path("none.f64")), "checkpoint");
  expect_error(cli("evaluate --checkpoint " + path("nothing.ckpt") + " --dataset " + path("x") + " --out " + path("r")),
               "checkpoint");
}

TEST_F(Cli, CorruptCheckpointDetected) {
  write("run.ini", kTinyIni);
  ASSERT_EQ(cli("generate --config " + path("run.ini") + " --n 6 --seed 1 --out " + path("train")).code, 0);
  ASSERT_EQ(cli("train --config " + path("run.ini") + " --dataset " + path("train") + " --out " + path("model")).code, 0);
  std::string bytes = io::read_file(path("model/model.ckpt"));
  bytes[bytes.size() / 2] ^= 0x04;
  io::write_atomic(path("model/model.ckpt"), bytes);
  const auto r = cli("infer --checkpoint " + path("model/model.ckpt") + " --input " + path("train/sample_0.f64"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("checksum"), std::string::npos) << r.out;
}

TEST_F(Cli, Gradcheck) {
  const auto r = cli("gradcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS op:matmul"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
