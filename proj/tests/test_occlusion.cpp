#include "oracles.hpp"

#include "soar/errors.hpp"
#include "soar/occlusion.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace soar;
using namespace soar::occlusion;

namespace {

Dataset views(std::size_t cameras, std::size_t per_class = 3, std::uint64_t seed = 0)
{
  SynthConfig c;
  c.n_classes = 2;
  c.samples_per_class = per_class;
  c.n_cameras = cameras;
  c.frames = 12;
  c.joints = 10;
  c.seed = seed;
  return synth_dataset(c);
}

}  // namespace

TEST(Snr, FractionOfMaskedCells)
{
  std::vector<std::uint8_t> m{1, 0, 0, 1, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(snr_of(m), 0.25);
  EXPECT_DOUBLE_EQ(snr_of(std::vector<std::uint8_t>{}), 0.0);
}

TEST(RandomOcclusion, ExactCellCount)
{
  auto const ds = views(1);
  std::mt19937_64 rng(1);
  for (double gamma : {0.1, 0.3, 0.5})
    for (auto const & s : ds.samples)
    {
      auto const o = occlude_random(s, gamma, rng);
      EXPECT_EQ(o.masked_count(), static_cast<std::size_t>(std::llround(gamma * 120)));
    }
  EXPECT_THROW(occlude_random(ds.samples[0], 0.0, rng), ConfigError);
  EXPECT_THROW(occlude_random(ds.samples[0], 1.0, rng), ConfigError);
}

TEST(TemporalOcclusion, WholeFramesMasked)
{
  auto const s = views(1).samples[0];
  std::mt19937_64 rng(2);
  auto const o = occlude_temporal(s, 4, rng);
  std::size_t full = 0;
  for (std::size_t t = 0; t < s.frames(); ++t)
  {
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.joints(); ++j)
      n += o.masked(t, j);
    EXPECT_TRUE(n == 0 || n == s.joints());
    full += n == s.joints();
  }
  EXPECT_EQ(full, 4u);
  EXPECT_THROW(occlude_temporal(s, s.frames(), rng), ConfigError);
}

TEST(SpatialOcclusion, FixedJointsPerFrame)
{
  auto const s = views(1).samples[0];
  std::mt19937_64 rng(3);
  auto const o = occlude_spatial(s, 3, rng);
  for (std::size_t t = 0; t < s.frames(); ++t)
  {
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.joints(); ++j)
      n += o.masked(t, j);
    EXPECT_EQ(n, 3u);
  }
}

TEST(MaskByOccluder, LargeOccluderInFrontMasksEverything)
{
  auto const s = views(1).samples[0];
  std::vector<Vec3> wall;
  for (double x : {-50.0, 50.0})
    for (double y : {-50.0, 50.0})
      for (double z : {0.5, 0.6})
        wall.push_back({x, y, z});
  auto const r = mask_by_occluder(s, wall);
  EXPECT_DOUBLE_EQ(r.snr, 1.0);
}

TEST(MaskByOccluder, BehindStillMasksAndSideMissesEverything)
{
  auto const s = views(1).samples[0];
  std::vector<Vec3> behind;
  for (double x : {-500.0, 500.0})
    for (double y : {-500.0, 500.0})
      for (double z : {40.0, 41.0})
        behind.push_back({x, y, z});
  EXPECT_DOUBLE_EQ(mask_by_occluder(s, behind).snr, 1.0);

  std::vector<Vec3> aside;
  for (double x : {20.0, 21.0})
    for (double y : {-0.5, 0.5})
      for (double z : {2.0, 3.0})
        aside.push_back({x, y, z});
  EXPECT_DOUBLE_EQ(mask_by_occluder(s, aside).snr, 0.0);
}

TEST(MaskByOccluder, MatchesPerJointHullOracle)
{
  auto const s = views(1).samples[1];
  std::vector<Vec3> box;
  for (double x : {-0.2, 0.3})
    for (double y : {-0.4, 0.1})
      for (double z : {1.0, 1.4})
        box.push_back({x, y, z});
  auto const r = mask_by_occluder(s, box);
  std::vector<Vec2> px;
  for (auto const & v : box)
    px.push_back({v[0] / v[2], v[1] / v[2]});
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t j = 0; j < s.joints(); ++j)
    {
      auto const p = s.point(t, j);
      EXPECT_EQ(r.sample.masked(t, j), oracle::in_hull_brute_force(px, {p[0] / p[2], p[1] / p[2]}, 1e-9));
    }
}

TEST(Calibrations, RecoverTruePoses)
{
  auto const ds = views(3);
  auto const cal = estimate_calibrations(ds);
  EXPECT_EQ(cal.size(), 6u);
  for (auto const & [key, f] : cal)
  {
    Mat4 const truth = ds.camera_poses[key.second] * rigid_inverse(ds.camera_poses[key.first]);
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_NEAR(f.matrix.m[i], truth.m[i], 1e-5);
  }
}

TEST(Realistic3D, InRangeAndConsistentAcrossViews)
{
  auto const ds = views(3, 4, 5);
  auto const cal = estimate_calibrations(ds);
  auto const occluders = procedural_occluders(1);
  OcclusionConfig cfg;
  cfg.n_frames = 0;
  cfg.n_joints = 0;
  std::mt19937_64 rng(9);
  std::vector<SkeletonSequence> group(ds.samples.begin(), ds.samples.begin() + 3);
  auto const g = occlude_realistic_3d(group, cal, occluders, cfg, rng);
  ASSERT_EQ(g.samples.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k)
  {
    if (g.in_range[k])
    {
      EXPECT_GE(g.snr[k], cfg.snr_min);
      EXPECT_LE(g.snr[k], cfg.snr_max);
    }
    EXPECT_DOUBLE_EQ(g.snr[k], snr_of(g.samples[k]));
    Mat4 const truth = ds.camera_poses[k] * rigid_inverse(ds.camera_poses[0]);
    for (std::size_t v = 0; v < g.occluder_views[0].size(); ++v)
    {
      auto const expect = truth.apply(g.occluder_views[0][v]);
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(g.occluder_views[k][v][c], expect[c], 1e-5);
    }
  }
}

TEST(Realistic3D, DatasetPassIsDeterministicAndKeepsOrder)
{
  auto const ds = views(2);
  auto const cal = estimate_calibrations(ds);
  auto const occ = procedural_occluders(0);
  OcclusionConfig cfg;
  cfg.n_frames = 0;
  cfg.n_joints = 0;
  cfg.seed = 4;
  auto const a = occlude_dataset_realistic_3d(ds, cal, occ, cfg);
  auto const b = occlude_dataset_realistic_3d(ds, cal, occ, cfg);
  EXPECT_EQ(a.dataset.samples, b.dataset.samples);
  ASSERT_EQ(a.dataset.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
  {
    EXPECT_EQ(a.dataset.samples[i].info, ds.samples[i].info);
    EXPECT_DOUBLE_EQ(a.snr[i], snr_of(a.dataset.samples[i]));
  }
}

TEST(Realistic3D, MissingCalibrationThrows)
{
  auto const ds = views(2);
  OcclusionConfig cfg;
  cfg.n_frames = 0;
  cfg.n_joints = 0;
  std::mt19937_64 rng(0);
  std::vector<SkeletonSequence> group(ds.samples.begin(), ds.samples.begin() + 2);
  EXPECT_THROW(occlude_realistic_3d(group, {}, procedural_occluders(0), cfg, rng), ConfigError);
}

TEST(Realistic2D, MasksInsideProjectedHull)
{
  SynthConfig c;
  c.n_classes = 2;
  c.samples_per_class = 2;
  c.frames = 8;
  c.dims = 2;
  auto const ds = synth_dataset(c);
  auto const occ = procedural_occluders(2);
  std::mt19937_64 rng(1);
  auto const r = occlude_realistic_2d(ds.samples[0], occ[0], rng);
  EXPECT_DOUBLE_EQ(r.snr, snr_of(r.sample));
  auto const again = occlude_with_projection(ds.samples[0], occ[0].vertices, r.projection);
  EXPECT_EQ(again.sample, r.sample);
}

TEST(Occluders, ProceduralAreValid)
{
  for (auto const & m : procedural_occluders(3, 9))
  {
    EXPECT_NO_THROW(m.validate());
    EXPECT_GE(m.vertices.size(), 8u);
    EXPECT_LE(m.vertices.size(), 48u);
  }
}

TEST(Occluders, LoadFromDirectory)
{
  auto const dir = std::filesystem::temp_directory_path() / "soar_occluders";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "b_box.txt");
    f << "# unit box\n";
    for (int i = 0; i < 8; ++i)
      f << (i & 1) << ' ' << ((i >> 1) & 1) << ' ' << ((i >> 2) & 1) << '\n';
  }
  {
    std::ofstream f(dir / "a_bad.txt");
    f << "1 2\n";
  }
  EXPECT_THROW(load_occluder_dir(dir), FormatError);
  std::filesystem::remove(dir / "a_bad.txt");
  auto const models = load_occluder_dir(dir);
  ASSERT_EQ(models.size(), 1u);
  EXPECT_EQ(models[0].name, "b_box");
  EXPECT_EQ(models[0].vertices.size(), 8u);
}

TEST(Histogram, BinsAndValidation)
{
  auto ds = views(1, 2);
  ds.samples[0].occlude(0, 0);  // snr 1/120
  for (std::size_t j = 0; j < 10; ++j)
    for (std::size_t t = 0; t < 12; ++t)
      ds.samples[1].occlude(t, j);  // snr 1
  auto const edges = uniform_bin_edges(4);
  auto const h = snr_histogram(ds, edges);
  EXPECT_EQ(h, (std::vector<std::size_t>{3, 0, 0, 1}));
  std::vector<double> bad{0.0, 0.5, 0.5, 1.0};
  EXPECT_THROW(snr_histogram(ds, bad), ConfigError);
}

TEST(Config, Validation)
{
  OcclusionConfig c;
  EXPECT_NO_THROW(c.validate(32, 25));
  c.snr_min = 0.3;
  EXPECT_THROW(c.validate(32, 25), ConfigError);
  c = {};
  c.n_frames = 32;
  EXPECT_THROW(c.validate(32, 25), ConfigError);
}
