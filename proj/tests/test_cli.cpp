#include "cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args)
{
  args.insert(args.begin(), "soar");
  std::vector<char const *> argv;
  for (auto const & a : args)
    argv.push_back(a.c_str());
  return soar::cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(std::string const & name)
{
  auto const p = fs::temp_directory_path() / ("soar_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(fs::path const & p)
{
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, HelpAndUsageErrors)
{
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({"synth", "--help"}), 0);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"synth"}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"occlude", "--in", "x", "--out", "y", "--mode", "blur"}), 1);
  EXPECT_EQ(run({"synth", "--classes", "1", "--out", scratch("bad").string()}), 1);
}

TEST(Cli, MissingDataIsDataError)
{
  EXPECT_EQ(run({"stats", "--data", scratch("nothing").string(), "--out", scratch("h.csv").string()}), 2);
}

TEST(Cli, SynthThenRandomOcclusionMasksExactCounts)
{
  auto const data = scratch("data");
  auto const occ = scratch("occ");
  auto const stats = scratch("snr.csv");
  ASSERT_EQ(run({"synth", "--classes", "3", "--per-class", "2", "--frames", "20", "--joints", "10", "--out",
                 data.string()}),
            0);
  ASSERT_EQ(run({"occlude", "--in", data.string(), "--out", occ.string(), "--mode", "random", "--gamma", "0.1",
                 "--stats", stats.string()}),
            0);
  std::istringstream lines(slurp(stats));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "index,label,camera_id,group_id,snr");
  std::size_t rows = 0;
  while (std::getline(lines, line))
  {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0.1");  // round(0.1 * 200) = 20 cells
  }
  EXPECT_EQ(rows, 6u);

  auto const hist = scratch("hist.csv");
  ASSERT_EQ(run({"stats", "--data", occ.string(), "--bins", "10", "--out", hist.string()}), 0);
  auto const h = slurp(hist);
  EXPECT_NE(h.find("0.1,0.2,6"), std::string::npos) << h;
}

TEST(Cli, DeterministicSynthAndOcclude)
{
  auto const a = scratch("det_a"), b = scratch("det_b");
  for (auto const & d : {a, b})
  {
    ASSERT_EQ(run({"synth", "--classes", "2", "--per-class", "2", "--cameras", "2", "--frames", "12", "--seed",
                   "5", "--out", d.string()}),
              0);
    ASSERT_EQ(run({"occlude", "--in", d.string(), "--out", (d / "re").string(), "--mode", "re3d", "--seed", "2"}), 0);
  }
  EXPECT_EQ(slurp(a / "samples.bin"), slurp(b / "samples.bin"));
  EXPECT_EQ(slurp(a / "re" / "samples.bin"), slurp(b / "re" / "samples.bin"));
}

TEST(Cli, TrainEvalPipeline)
{
  auto const data = scratch("pipe_data");
  auto const ckpt = scratch("pipe_ckpt");
  auto const cfg = scratch("model.json");
  auto const tcfg = scratch("train.json");
  auto const sweep = scratch("sweep.json");
  auto const log = scratch("log.csv");
  auto const plain = scratch("plain.csv");
  auto const swept = scratch("swept.csv");
  std::ofstream(cfg) << R"({"preset": "micro", "in_channels": 3})";
  std::ofstream(tcfg) << R"({"epochs": 3, "batch_size": 4, "learning_rate": 0.001})";
  std::ofstream(sweep) << R"([{"name": "clean", "mode": "none"}, {"name": "ra", "mode": "random", "gamma": 0.1}])";

  ASSERT_EQ(run({"synth", "--classes", "4", "--per-class", "4", "--frames", "8", "--joints", "6", "--out",
                 data.string()}),
            0);
  ASSERT_EQ(run({"train", "--data", data.string(), "--config", cfg.string(), "--train-config", tcfg.string(),
                 "--out", ckpt.string(), "--log", log.string()}),
            0);
  EXPECT_TRUE(fs::exists(ckpt / "params.bin"));
  EXPECT_EQ(slurp(log).substr(0, 7), "epoch,L");

  ASSERT_EQ(run({"eval", "--data", data.string(), "--checkpoint", ckpt.string(), "--metrics", plain.string()}), 0);
  ASSERT_EQ(run({"eval", "--data", data.string(), "--checkpoint", ckpt.string(), "--sweep", sweep.string(),
                 "--occval", "true", "--metrics", swept.string()}),
            0);
  auto const p = slurp(plain);
  auto const s = slurp(swept);
  // The identity cell reproduces plain eval.
  EXPECT_EQ(s.substr(0, p.size()), p);
  EXPECT_NE(s.find("\nra,"), std::string::npos);

  EXPECT_EQ(run({"eval", "--data", data.string(), "--checkpoint", ckpt.string(), "--occval", "maybe"}), 1);
  EXPECT_EQ(run({"eval", "--data", data.string(), "--checkpoint", scratch("nockpt").string()}), 2);
}
