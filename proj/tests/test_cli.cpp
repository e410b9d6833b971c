#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "coda/io.hpp"
#include "tiny_config.hpp"

using namespace coda;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "coda_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(CODA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    io::save_train_config(kRoot / "tiny.json", tiny_config());
  }
  static std::string cfg() { return "--config " + (kRoot / "tiny.json").string(); }
};

}  // namespace

TEST_F(Cli, GenIsByteIdentical) {
  ASSERT_EQ(run("gen " + cfg() + " --out " + (kRoot / "gen_a").string()), 0);
  ASSERT_EQ(run("gen " + cfg() + " --out " + (kRoot / "gen_b").string()), 0);
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "gen_a")) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(kRoot / "gen_b" / fs::relative(e.path(), kRoot / "gen_a"))) << e.path();
  }
  const auto m = io::json::parse(slurp(kRoot / "gen_a" / "manifest.json"));
  EXPECT_EQ(m.at("scenes").size(), 9u);
  for (const auto& s : m.at("scenes")) {
    EXPECT_TRUE(fs::exists(kRoot / "gen_a" / s.at("points").get<std::string>()));
    EXPECT_TRUE(fs::exists(kRoot / "gen_a" / s.at("objects").get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(kRoot / "gen_a" / "run_manifest.json"));
}

TEST_F(Cli, SeedOverrideChangesData) {
  ASSERT_EQ(run("gen " + cfg() + " --seed 5 --out " + (kRoot / "gen_seed").string()), 0);
  ASSERT_EQ(run("gen " + cfg() + " --out " + (kRoot / "gen_noseed").string()), 0);
  EXPECT_NE(slurp(kRoot / "gen_seed" / "scenes" / "train_00000.bin"),
            slurp(kRoot / "gen_noseed" / "scenes" / "train_00000.bin"));
}

TEST_F(Cli, TrainPlotEval) {
  const fs::path data = kRoot / "data", out = kRoot / "run";
  ASSERT_EQ(run("gen " + cfg() + " --out " + data.string()), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + data.string() + " --out " + out.string()), 0);
  const std::string metrics = slurp(out / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), io::kMetricsHeader);
  EXPECT_EQ(io::read_metrics_csv(out / "metrics.csv").size(), 4u);
  for (const char* f : {"run_manifest.json", "config.json", "pool.json", "checkpoint.bin"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_TRUE(fs::exists(out / "pool" / "pool_epoch_0005.json"));

  ASSERT_EQ(run("plot " + out.string()), 0);
  const std::string svg = slurp(out / "novel_curves.svg");
  EXPECT_NE(svg.find("stage-boundary"), std::string::npos);

  ASSERT_EQ(run("eval " + cfg() + " --dataset " + data.string() + " --checkpoint " + (out / "checkpoint.bin").string() +
                " --out " + (kRoot / "eval").string()),
            0);
  EXPECT_TRUE(fs::exists(kRoot / "eval" / "eval.json"));

  // same run again gives the same CSV
  ASSERT_EQ(run("train " + cfg() + " --dataset " + data.string() + " --out " + (kRoot / "run2").string()), 0);
  EXPECT_EQ(slurp(kRoot / "run2" / "metrics.csv"), metrics);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen --bogus"), 2);
  EXPECT_EQ(run("gen"), 2);
  EXPECT_EQ(run("gen --config " + (kRoot / "missing.json").string() + " --out " + (kRoot / "x").string()), 2);
  std::ofstream(kRoot / "unknown.json") << R"({"not_a_key": 1})";
  EXPECT_EQ(run("gen --config " + (kRoot / "unknown.json").string() + " --out " + (kRoot / "x").string()), 2);
  EXPECT_EQ(run("train " + cfg() + " --dataset " + (kRoot / "no_such_data").string() + " --out " +
                (kRoot / "y").string()),
            3);
  fs::create_directories(kRoot / "empty_run");
  EXPECT_EQ(run("plot " + (kRoot / "empty_run").string()), 3);
}
