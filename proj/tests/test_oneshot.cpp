#include "soar/errors.hpp"
#include "soar/oneshot.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace soar;
using namespace soar::eval;

namespace {

// Exhaustive argmax of cosine similarity, lowest class id on ties.
std::uint32_t brute_force_cosine(std::vector<double> const & q, std::vector<std::vector<double>> const & support,
                                 std::vector<std::uint32_t> const & labels)
{
  auto norm = [](std::vector<double> const & v) {
    double s = 0;
    for (double x : v)
      s += x * x;
    return std::sqrt(s);
  };
  double best = -2;
  std::uint32_t best_label = 0;
  for (std::size_t i = 0; i < support.size(); ++i)
  {
    double dot = 0;
    for (std::size_t k = 0; k < q.size(); ++k)
      dot += q[k] * support[i][k];
    double const c = dot / (norm(q) * norm(support[i]));
    if (c > best || (c == best && labels[i] < best_label))
    {
      best = c;
      best_label = labels[i];
    }
  }
  return best_label;
}

}  // namespace

TEST(Classify, ExactMatchAndNoisyCopy)
{
  std::vector<std::vector<double>> support{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<std::uint32_t> labels{4, 7, 9};
  EXPECT_EQ(classify_one_shot(support[1], support, labels), 7u);
  std::vector<double> q{1e-3, -2e-3, 1.0};
  EXPECT_EQ(classify_one_shot(q, support, labels), 9u);
}

TEST(Classify, TiesGoToLowestClass)
{
  std::vector<std::vector<double>> support{{1, 0}, {1, 0}};
  std::vector<std::uint32_t> labels{5, 2};
  std::vector<double> q{2, 0};
  EXPECT_EQ(classify_one_shot(q, support, labels), 2u);
  EXPECT_EQ(classify_one_shot(q, support, labels, Matching::euclidean), 2u);
}

TEST(Classify, AgreesWithExhaustiveSearchAndIgnoresScale)
{
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 200; ++trial)
  {
    std::vector<std::vector<double>> support(6, std::vector<double>(5));
    std::vector<std::uint32_t> labels{0, 1, 2, 3, 4, 5};
    for (auto & s : support)
      for (auto & x : s)
        x = n(rng);
    std::vector<double> q(5);
    for (auto & x : q)
      x = n(rng);
    auto const expect = brute_force_cosine(q, support, labels);
    EXPECT_EQ(classify_one_shot(q, support, labels), expect);
    for (auto & s : support)
      for (auto & x : s)
        x *= 3.5;
    for (auto & x : q)
      x *= 0.01;
    EXPECT_EQ(classify_one_shot(q, support, labels), expect);
  }
}

TEST(Metrics, PerfectPredictions)
{
  std::vector<std::uint32_t> y{0, 1, 1, 2};
  std::vector<std::uint32_t> classes{0, 1, 2};
  auto const m = compute_metrics(y, y, classes);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.n_test, 4u);
}

TEST(Metrics, ConstantPredictorOnTwoBalancedClasses)
{
  std::vector<std::uint32_t> labels{0, 0, 1, 1};
  std::vector<std::uint32_t> pred{0, 0, 0, 0};
  std::vector<std::uint32_t> classes{0, 1};
  auto const m = compute_metrics(pred, labels, classes);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  // Class 0: P = 1/2, R = 1, F1 = 2/3. Class 1: never predicted, all zero.
  EXPECT_DOUBLE_EQ(m.f1, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.25);
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
}

TEST(Metrics, AccuracyEqualsMacroRecallWhenBalanced)
{
  std::vector<std::uint32_t> labels{0, 0, 0, 1, 1, 1, 2, 2, 2};
  std::vector<std::uint32_t> pred{0, 1, 0, 1, 1, 2, 0, 2, 2};
  std::vector<std::uint32_t> classes{0, 1, 2};
  auto const m = compute_metrics(pred, labels, classes);
  EXPECT_NEAR(m.accuracy, m.recall, 1e-15);
  // Permutation invariance.
  std::vector<std::uint32_t> l2{2, 2, 2, 1, 1, 1, 0, 0, 0}, p2{0, 2, 2, 1, 1, 2, 0, 1, 0};
  auto const m2 = compute_metrics(p2, l2, classes);
  EXPECT_DOUBLE_EQ(m.f1, m2.f1);
  EXPECT_DOUBLE_EQ(m.precision, m2.precision);
}

namespace {

struct Fixture {
  Dataset ds;
  OneShotSplit split;
  model::Trans4Soar net{model::ModelConfig::micro(2), 3};

  Fixture()
  {
    SynthConfig sc;
    sc.n_classes = 4;
    sc.samples_per_class = 4;
    sc.frames = 8;
    sc.joints = 6;
    ds = synth_dataset(sc);
    split = make_one_shot_split(ds, {0, 1}, {2, 3}, 0);
  }
};

}  // namespace

TEST(Evaluate, IdentitySweepReproducesPlainEval)
{
  Fixture f;
  auto const plain = evaluate(f.net, f.split.support, f.split.test, f.ds.topology);
  std::vector<SweepCell> cells{{"none", OcclusionMode::none}};
  OcclusionContext ctx;
  ctx.dataset = &f.ds;
  auto const rows = occlusion_sweep(f.net, f.split, f.ds.topology, cells, ctx, true, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].metrics.accuracy, plain.accuracy);
  EXPECT_EQ(rows[0].metrics.f1, plain.f1);
  EXPECT_EQ(rows[0].metrics.n_test, 6u);
}

TEST(Evaluate, ZeroNoiseEqualsClean)
{
  Fixture f;
  auto const plain = evaluate(f.net, f.split.support, f.split.test, f.ds.topology);
  auto const noisy = gaussian_noise_eval(f.net, f.split, f.ds.topology, 0.0, 0.0, 5);
  EXPECT_EQ(noisy.accuracy, plain.accuracy);
  EXPECT_EQ(noisy.f1, plain.f1);
}

TEST(Noise, DeterministicAndSkipsMaskedCells)
{
  Fixture f;
  std::vector<SkeletonSequence> s{f.ds.samples[0]};
  s[0].occlude(1, 1);
  auto const a = add_gaussian_noise(s, 0.1, 0.0, 3);
  auto const b = add_gaussian_noise(s, 0.1, 0.0, 3);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a[0].masked(1, 1));
  EXPECT_EQ(a[0].at(1, 1, 0), 0.0f);
  EXPECT_NE(a[0].at(0, 0, 0), s[0].at(0, 0, 0));
}

TEST(Sweep, ParsesGridAndRejectsUnknownModes)
{
  auto const cells = parse_sweep(R"([{"name": "ra", "mode": "random", "gamma": 0.3},
                                     {"mode": "re3d", "snr_min": 0.05, "snr_max": 0.5}])");
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].name, "ra");
  EXPECT_DOUBLE_EQ(cells[0].gamma, 0.3);
  EXPECT_EQ(cells[1].name, "re3d");
  EXPECT_DOUBLE_EQ(cells[1].snr_max, 0.5);
  EXPECT_THROW(parse_sweep(R"([{"mode": "blur"}])"), ConfigError);
  EXPECT_THROW(parse_sweep(R"({"mode": "random"})"), ConfigError);
}

TEST(Sweep, RandomCellMasksExactCounts)
{
  Fixture f;
  SweepCell cell{"ra", OcclusionMode::random};
  cell.gamma = 0.5;
  OcclusionContext ctx;
  auto const out = apply_occlusion(f.split.test, cell, ctx, 2);
  for (auto const & s : out)
    EXPECT_EQ(s.masked_count(), 24u);
}

TEST(MetricsCsv, Columns)
{
  auto const path = std::filesystem::temp_directory_path() / "soar_metrics.csv";
  std::vector<SweepRow> rows{{"clean", {0.5, 1.0 / 3.0, 0.25, 0.5, 4}}};
  write_metrics_csv(path, rows);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "condition,accuracy,f1,precision,recall,n_test");
  EXPECT_EQ(row, "clean,0.5,0.3333333333,0.25,0.5,4");
}
