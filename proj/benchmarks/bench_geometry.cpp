#include "soar/geometry.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace soar;

namespace {

std::vector<Vec2> random_points(std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec2> pts(n);
  for (auto & p : pts)
    p = {u(rng), u(rng)};
  return pts;
}

void BM_ConvexHull(benchmark::State & state)
{
  auto const pts = random_points(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(geometry::convex_hull_2d(pts));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ConvexHull)->Arg(8)->Arg(48)->Arg(1024);

void BM_PointInHull(benchmark::State & state)
{
  auto const hull = geometry::convex_hull_2d(random_points(48, 2));
  auto const queries = random_points(1024, 3);
  for (auto _ : state)
  {
    std::size_t inside = 0;
    for (auto const & q : queries)
      inside += geometry::is_in_hull(hull, q);
    benchmark::DoNotOptimize(inside);
  }
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_PointInHull);

void BM_EstimateCalibration(benchmark::State & state)
{
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Mat4 const truth = yaw_translation(0.7, {0.3, -0.1, 2.0});
  std::vector<Vec3> from(static_cast<std::size_t>(state.range(0))), to;
  for (auto & p : from)
  {
    p = {u(rng), u(rng), u(rng)};
    to.push_back(truth.apply(p));
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(geometry::estimate_calibration(from, to));
}
BENCHMARK(BM_EstimateCalibration)->Arg(25)->Arg(800);

}  // namespace
