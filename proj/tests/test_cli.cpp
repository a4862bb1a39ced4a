// Runs the built `pcb` binary end to end on small synthetic configs.

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "pcb/experiment.hpp"
#include "cli_runner.hpp"
#include "test_helpers.hpp"

namespace pcb {
namespace {

namespace fs = std::filesystem;
using test::count_lines;
using test::run;
using test::slurp;

// 4 classes x `per_class` clouds of `points` points in dir/gen.
std::string small_gen(const fs::path& dir, int per_class, int points, int test_per_class = 5) {
  const auto out = dir / "gen";
  EXPECT_EQ(run("gen --seed 11 --points " + std::to_string(points) + " --train-per-class " + std::to_string(per_class) +
                " --test-per-class " + std::to_string(test_per_class) + " -o " + out.string()),
            0);
  return out.string();
}

TEST(Cli, PoisonFivePercentOfHundredMarksFive) {
  const auto dir = test::scratch_dir("cli_poison");
  const auto gen = small_gen(dir, 25, 32);
  ASSERT_EQ(run("poison --seed 3 --data " + gen + "/train.pcbd --rate 0.05 -w 16 -o " + (dir / "p").string()), 0);
  const auto meta = json::parse(slurp(dir / "p" / "poison.json"));
  EXPECT_EQ(meta["count"].get<int>(), 5);
  EXPECT_EQ(meta["indices"].size(), 5u);
  const auto ds = load_dataset(dir / "p" / "poisoned.pcbd");
  ASSERT_EQ(ds.size(), 100u);
  std::size_t flagged = 0;
  for (const auto& s : ds.clouds) flagged += s.poisoned;
  EXPECT_EQ(flagged, 5u);
  EXPECT_FALSE(fs::exists(dir / "p" / ".partial"));
}

TEST(Cli, ConstantCheckpointScoresChance) {
  const auto dir = test::scratch_dir("cli_eval");
  const auto gen = small_gen(dir, 2, 16, 10);
  auto p = init_params(1, 4, 8, 1);
  p.W4().setZero();
  p.b4().setZero();
  p.b4()(2) = 1.0f;
  save_checkpoint(Checkpoint{p, {1}}, dir / "const.pcbm");
  ASSERT_EQ(run("eval --set poison.w=8 --model " + (dir / "const.pcbm").string() + " --test " + gen + "/test.pcbd -o " +
                (dir / "e").string()),
            0);
  const auto m = json::parse(slurp(dir / "e" / "metrics.json"));
  EXPECT_EQ(m["acc"].get<double>(), 0.25);
  EXPECT_EQ(m["test_size"].get<int>(), 40);
}

TEST(Cli, SweepWritesEightRowsAndReportAggregates) {
  const auto dir = test::scratch_dir("cli_sweep");
  const auto gen = small_gen(dir, 3, 32);
  ASSERT_EQ(run("poison --seed 3 --data " + gen + "/train.pcbd --rate 0.1 -w 16 -o " + (dir / "p").string()), 0);
  ASSERT_EQ(run("defend --seed 5 --sweep --set train.epochs=1 --set poison.w=16 --data " + (dir / "p").string() +
                "/poisoned.pcbd --test " + gen + "/test.pcbd -o " + (dir / "d").string()),
            0);
  EXPECT_EQ(count_lines(dir / "d" / "sweep.csv"), 9u);
  ASSERT_EQ(run("report " + (dir / "d").string() + " -o " + (dir / "r").string()), 0);
  EXPECT_EQ(count_lines(dir / "r" / "report.csv"), 9u);
}

TEST(Cli, ExitCodes) {
  const auto dir = test::scratch_dir("cli_exit");
  const auto gen = small_gen(dir, 2, 16);
  EXPECT_EQ(run("gen --bogus-flag"), kExitUsage);
  EXPECT_EQ(run("train --data " + gen + "/train.pcbd -o " + (dir / "noseed").string()), kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "noseed"));

  std::ofstream(dir / "unknown.json") << R"({"schema_version": 1, "trian": {}})";
  EXPECT_EQ(run("gen --seed 1 -c " + (dir / "unknown.json").string() + " -o " + (dir / "u").string()), kExitUsage);
  std::ofstream(dir / "version.json") << R"({"schema_version": 9})";
  EXPECT_EQ(run("gen --seed 1 -c " + (dir / "version.json").string() + " -o " + (dir / "v").string()), kExitUsage);
  EXPECT_EQ(run("poison --seed 1 --rate 1.5 --data " + gen + "/train.pcbd -o " + (dir / "r").string()), kExitUsage);

  std::ofstream(dir / "garbage.pcbd") << "not a dataset";
  EXPECT_EQ(run("train --seed 1 --data " + (dir / "garbage.pcbd").string() + " -o " + (dir / "g").string()), kExitData);
  auto bytes = slurp(gen + "/train.pcbd");
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(dir / "flipped.pcbd", std::ios::binary) << bytes;
  EXPECT_EQ(run("train --seed 1 --data " + (dir / "flipped.pcbd").string() + " -o " + (dir / "f").string()), kExitData);

  fs::create_directories(dir / "half");
  std::ofstream(dir / "half" / ".partial") << "eval\n";
  EXPECT_EQ(run("report " + (dir / "half").string() + " -o " + (dir / "rep").string()), kExitData);
}

TEST(Cli, RerunsAreByteIdentical) {
  const auto a = test::scratch_dir("cli_det_a");
  const auto b = test::scratch_dir("cli_det_b");
  ASSERT_TRUE(test::pipeline_run(a));
  ASSERT_TRUE(test::pipeline_run(b));
  const auto fa = test::artifacts(a), fb = test::artifacts(b);
  EXPECT_EQ(fa.size(), 14u);
  ASSERT_EQ(fa.size(), fb.size());
  for (const auto& [name, bytes] : fa) {
    ASSERT_TRUE(fb.count(name)) << name;
    EXPECT_TRUE(bytes == fb.at(name)) << name;
  }
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto dir = test::scratch_dir("cli_env");
  const std::string cmd = "PCB_OUTPUT_ROOT=" + dir.string() + " " + PCB_CLI_PATH +
                          " gen --seed 1 --points 8 --train-per-class 1 >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "gen" / "train.pcbd"));
}

}  // namespace
}  // namespace pcb
