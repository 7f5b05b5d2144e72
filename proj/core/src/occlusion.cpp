#include "soar/occlusion.hpp"

#include "soar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

namespace soar::occlusion {

void OccluderModel::validate() const
{
  if (vertices.size() < 4)
    throw ConfigError("occluder '" + name + "' needs at least four vertices");
  for (auto const & v : vertices)
    for (double c : v)
      if (!std::isfinite(c) || std::abs(c) > 100.0)
        throw ConfigError("occluder '" + name + "' has non-finite or unbounded vertices");
}

namespace {

void add_box(std::vector<Vec3> & v, double x0, double x1, double y0, double y1, double z0, double z1)
{
  for (double x : {x0, x1})
    for (double y : {y0, y1})
      for (double z : {z0, z1})
        v.push_back({x, y, z});
}

}  // namespace

std::vector<OccluderModel> procedural_occluders(std::uint64_t seed, std::size_t count)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<OccluderModel> out;
  for (std::size_t i = 0; i < count; ++i)
  {
    OccluderModel m;
    switch (i % 3)
    {
    case 0: {
      double const w = 0.4 + 0.6 * u(rng);
      double const h = 0.4 + 0.6 * u(rng);
      double const d = 0.4 + 0.6 * u(rng);
      m.name = "box_" + std::to_string(i);
      add_box(m.vertices, -w / 2, w / 2, 0.0, h, -d / 2, d / 2);
      break;
    }
    case 1: {
      double const w = 0.8 + 0.8 * u(rng);
      double const h = 0.65 + 0.2 * u(rng);
      double const d = 0.5 + 0.4 * u(rng);
      double const leg = 0.05;
      m.name = "table_" + std::to_string(i);
      add_box(m.vertices, -w / 2, w / 2, h - 0.05, h, -d / 2, d / 2);
      for (double sx : {-1.0, 1.0})
        for (double sz : {-1.0, 1.0})
        {
          double const x = sx * (w / 2 - leg);
          double const z = sz * (d / 2 - leg);
          add_box(m.vertices, x - leg / 2, x + leg / 2, 0.0, h - 0.05, z - leg / 2, z + leg / 2);
        }
      break;
    }
    default: {
      double const w = 0.4 + 0.2 * u(rng);
      double const seat = 0.4 + 0.1 * u(rng);
      double const back = 0.85 + 0.2 * u(rng);
      double const leg = 0.04;
      m.name = "chair_" + std::to_string(i);
      add_box(m.vertices, -w / 2, w / 2, seat - 0.04, seat, -w / 2, w / 2);
      for (double sx : {-1.0, 1.0})
        for (double sz : {-1.0, 1.0})
        {
          double const x = sx * (w / 2 - leg);
          double const z = sz * (w / 2 - leg);
          add_box(m.vertices, x - leg / 2, x + leg / 2, 0.0, seat - 0.04, z - leg / 2, z + leg / 2);
        }
      add_box(m.vertices, -w / 2, w / 2, seat, back, w / 2 - 0.04, w / 2);
      break;
    }
    }
    out.push_back(std::move(m));
  }
  return out;
}

OccluderModel load_occluder(std::filesystem::path const & path)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open occluder file " + path.string());
  OccluderModel m;
  m.name = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line))
  {
    ++lineno;
    auto const hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    std::istringstream fields(line);
    Vec3 v{};
    std::string extra;
    if (!(fields >> v[0] >> v[1] >> v[2]) || (fields >> extra))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y z'");
    m.vertices.push_back(v);
  }
  try
  {
    m.validate();
  }
  catch (ConfigError const & e)
  {
    throw DataError(e.what());
  }
  return m;
}

std::vector<OccluderModel> load_occluder_dir(std::filesystem::path const & dir)
{
  if (!std::filesystem::is_directory(dir))
    throw DataError("occluder directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (auto const & entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file())
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<OccluderModel> out;
  for (auto const & f : files)
    out.push_back(load_occluder(f));
  if (out.empty())
    throw DataError("occluder directory " + dir.string() + " is empty");
  return out;
}

void OcclusionConfig::validate(std::size_t frames, std::size_t joints) const
{
  if (!(snr_min > 0.0 && snr_min < snr_max && snr_max < 1.0))
    throw ConfigError("SNR range must satisfy 0 < a < b < 1");
  if (min_occluded_views < 1)
    throw ConfigError("min_occluded_views must be at least 1");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("gamma must lie in (0, 1)");
  if (n_frames >= frames)
    throw ConfigError("n_frames must be smaller than T");
  if (n_joints >= joints)
    throw ConfigError("n_joints must be smaller than J");
}

double snr_of(std::span<std::uint8_t const> mask)
{
  if (mask.empty())
    return 0.0;
  std::size_t const n = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

namespace {

MaskResult mask_inside(SkeletonSequence const & sample, geometry::ConvexHull2D const & hull,
                       auto && project_joint)
{
  MaskResult r{sample, 0.0};
  for (std::size_t t = 0; t < sample.frames(); ++t)
    for (std::size_t j = 0; j < sample.joints(); ++j)
    {
      if (sample.masked(t, j))
        continue;
      if (geometry::is_in_hull(hull, project_joint(t, j)))
        r.sample.occlude(t, j);
    }
  r.snr = snr_of(r.sample);
  return r;
}

}  // namespace

MaskResult mask_by_occluder(SkeletonSequence const & sample, std::span<Vec3 const> occluder_in_camera)
{
  if (sample.dims() != 3)
    throw ConfigError("3D occlusion requires B = 3 samples");
  auto const projected = geometry::perspective_project(occluder_in_camera);
  auto const hull = geometry::convex_hull_2d(projected);
  return mask_inside(sample, hull, [&](std::size_t t, std::size_t j) {
    Vec3 const p = sample.point(t, j);
    if (!(p[2] > geometry::kDepthEpsilon))
      throw GeometryError("joint (" + std::to_string(t) + ", " + std::to_string(j) + ") lies behind the camera");
    return Vec2{p[0] / p[2], p[1] / p[2]};
  });
}

CalibrationSet estimate_calibrations(Dataset const & dataset)
{
  if (dataset.dims != 3)
    throw ConfigError("camera calibration requires a 3D dataset");
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    groups[dataset.samples[i].info.group_id].push_back(i);

  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<std::vector<Vec3>, std::vector<Vec3>>> pairs;
  for (auto const & [gid, members] : groups)
    for (std::size_t a : members)
      for (std::size_t b : members)
      {
        auto const & sa = dataset.samples[a];
        auto const & sb = dataset.samples[b];
        if (sa.info.camera_id == sb.info.camera_id)
          continue;
        auto & [from, to] = pairs[{sa.info.camera_id, sb.info.camera_id}];
        for (std::size_t t = 0; t < sa.frames(); ++t)
          for (std::size_t j = 0; j < sa.joints(); ++j)
            if (!sa.masked(t, j) && !sb.masked(t, j))
            {
              from.push_back(sa.point(t, j));
              to.push_back(sb.point(t, j));
            }
      }

  CalibrationSet out;
  for (auto const & [key, corr] : pairs)
    out[key] = geometry::estimate_calibration(corr.first, corr.second).calibration;
  return out;
}

namespace {

double range_distance(double v, double a, double b)
{
  if (v < a)
    return a - v;
  if (v > b)
    return v - b;
  return 0.0;
}

}  // namespace

GroupOcclusion occlude_realistic_3d(std::span<SkeletonSequence const> group, CalibrationSet const & calibrations,
                                    std::span<OccluderModel const> occluders, OcclusionConfig const & config,
                                    std::mt19937_64 & rng)
{
  if (group.empty())
    throw ConfigError("realistic occlusion needs a non-empty group");
  if (occluders.empty())
    throw ConfigError("realistic occlusion needs at least one occluder");
  for (auto const & s : group)
    if (s.dims() != 3)
      throw ConfigError("3D realistic occlusion requires B = 3 samples");
  config.validate(group.front().frames(), group.front().joints());

  SkeletonSequence const & ref = group.front();
  std::vector<geometry::AffineCalibration> to_view;
  std::vector<geometry::Box3> skeleton_boxes;
  for (auto const & s : group)
  {
    if (s.info.camera_id == ref.info.camera_id)
      to_view.push_back({});
    else
    {
      auto const it = calibrations.find({ref.info.camera_id, s.info.camera_id});
      if (it == calibrations.end())
        throw ConfigError("missing calibration from camera " + std::to_string(ref.info.camera_id) + " to camera " +
                          std::to_string(s.info.camera_id));
      to_view.push_back(it->second);
    }
    skeleton_boxes.push_back(geometry::bounding_box(s));
  }

  std::uniform_int_distribution<std::size_t> pick(0, occluders.size() - 1);
  std::optional<GroupOcclusion> best;
  double best_distance = std::numeric_limits<double>::infinity();
  std::size_t attempts = 0;

  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt)
  {
    ++attempts;
    std::optional<GroupOcclusion> candidate;
    for (std::size_t tries = 0; tries < config.max_placement_tries && !candidate; ++tries)
    {
      std::size_t const index = pick(rng);
      auto const placed = geometry::rigid_augment(occluders[index].vertices, ref, rng, config.augment);

      GroupOcclusion g;
      g.occluder_index = index;
      g.augment = placed.augment;
      bool valid = true;
      for (std::size_t d = 0; d < group.size() && valid; ++d)
      {
        auto view = geometry::apply_calibration(to_view[d], placed.vertices);
        valid = geometry::bounding_box(view).disjoint(skeleton_boxes[d]);
        g.occluder_views.push_back(std::move(view));
      }
      if (!valid)
        continue;
      try
      {
        for (std::size_t d = 0; d < group.size(); ++d)
        {
          auto m = mask_by_occluder(group[d], g.occluder_views[d]);
          g.in_range.push_back(m.snr >= config.snr_min && m.snr <= config.snr_max);
          g.snr.push_back(m.snr);
          g.samples.push_back(std::move(m.sample));
        }
      }
      catch (GeometryError const &)
      {
        continue;  // occluder behind a camera or degenerate projection
      }
      candidate = std::move(g);
    }
    if (!candidate)
      continue;

    candidate->attempts = attempts;
    std::size_t const hits = static_cast<std::size_t>(std::count(candidate->in_range.begin(), candidate->in_range.end(), true));
    if (hits >= config.min_occluded_views)
      return std::move(*candidate);

    double const mean = std::accumulate(candidate->snr.begin(), candidate->snr.end(), 0.0) /
                        static_cast<double>(candidate->snr.size());
    double const distance = range_distance(mean, config.snr_min, config.snr_max);
    if (distance < best_distance)
    {
      best_distance = distance;
      best = std::move(candidate);
    }
  }

  if (!best)
    throw OcclusionError("no valid occluder placement found for group " + std::to_string(ref.info.group_id));
  best->attempts = attempts;
  best->exhausted = true;
  return std::move(*best);
}

DatasetOcclusion occlude_dataset_realistic_3d(Dataset const & dataset, CalibrationSet const & calibrations,
                                              std::span<OccluderModel const> occluders,
                                              OcclusionConfig const & config)
{
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    groups[dataset.samples[i].info.group_id].push_back(i);

  DatasetOcclusion out;
  out.dataset = dataset;
  out.snr.assign(dataset.samples.size(), 0.0);
  std::mt19937_64 rng(config.seed);
  for (auto & [gid, members] : groups)
  {
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return dataset.samples[a].info.camera_id < dataset.samples[b].info.camera_id;
    });
    std::vector<SkeletonSequence> group;
    for (std::size_t i : members)
      group.push_back(dataset.samples[i]);
    auto result = occlude_realistic_3d(group, calibrations, occluders, config, rng);
    for (std::size_t k = 0; k < members.size(); ++k)
    {
      out.dataset.samples[members[k]] = std::move(result.samples[k]);
      out.snr[members[k]] = result.snr[k];
    }
    out.groups.push_back({gid, result.attempts, result.exhausted});
  }
  return out;
}

MaskResult occlude_with_projection(SkeletonSequence const & sample, std::span<Vec3 const> occluder,
                                   Projection const & p)
{
  if (sample.dims() != 2)
    throw ConfigError("2D occlusion requires B = 2 samples");
  std::vector<Vec2> pixels;
  pixels.reserve(occluder.size());
  for (std::size_t i = 0; i < occluder.size(); ++i)
  {
    auto const & v = occluder[i];
    double const u = p[0] * v[0] + p[1] * v[1] + p[2] * v[2] + p[3];
    double const w = p[4] * v[0] + p[5] * v[1] + p[6] * v[2] + p[7];
    double const s = p[8] * v[0] + p[9] * v[1] + p[10] * v[2] + p[11];
    if (!(s > geometry::kDepthEpsilon) || !std::isfinite(u) || !std::isfinite(w))
      throw GeometryError("occluder vertex " + std::to_string(i) + " projects degenerately");
    pixels.push_back({u / s, w / s});
  }
  auto const hull = geometry::convex_hull_2d(pixels);
  return mask_inside(sample, hull, [&](std::size_t t, std::size_t j) {
    return Vec2{sample.at(t, j, 0), sample.at(t, j, 1)};
  });
}

Realistic2DResult occlude_realistic_2d(SkeletonSequence const & sample, OccluderModel const & occluder,
                                       std::mt19937_64 & rng, Realistic2DConfig const & config)
{
  if (sample.dims() != 2)
    throw ConfigError("2D occlusion requires B = 2 samples");
  if (!(config.focal_min > 0.0 && config.focal_min <= config.focal_max && config.depth_min > 0.0 &&
        config.depth_min <= config.depth_max))
    throw ConfigError("invalid 2D occlusion configuration");
  occluder.validate();

  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  double centroid[2] = {0.0, 0.0};
  std::size_t visible = 0;
  for (std::size_t t = 0; t < sample.frames(); ++t)
    for (std::size_t j = 0; j < sample.joints(); ++j)
      if (!sample.masked(t, j))
        for (std::size_t b = 0; b < 2; ++b)
        {
          double const v = sample.at(t, j, b);
          lo[b] = std::min(lo[b], v);
          hi[b] = std::max(hi[b], v);
          centroid[b] += v;
          visible += (b == 0);
        }
  if (visible == 0)
    throw OcclusionError("sample has no visible joints");
  centroid[0] /= static_cast<double>(visible);
  centroid[1] /= static_cast<double>(visible);
  double const scale = std::max({hi[0] - lo[0], hi[1] - lo[1], 1.0});

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> centred(-0.5, 0.5);
  std::optional<Realistic2DResult> last;
  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt)
  {
    double const focal = scale * (config.focal_min + (config.focal_max - config.focal_min) * unit(rng));
    double const cx = centroid[0] + scale * centred(rng);
    double const cy = centroid[1] + scale * centred(rng);
    double const yaw = 2.0 * std::numbers::pi * unit(rng);
    double const depth = config.depth_min + (config.depth_max - config.depth_min) * unit(rng);
    Mat4 const pose = yaw_translation(yaw, {centred(rng), centred(rng), depth});
    // K [R | t] with image rows growing downwards.
    Projection p{};
    for (std::size_t c = 0; c < 4; ++c)
    {
      p[c] = focal * pose(0, c) + cx * pose(2, c);
      p[4 + c] = -focal * pose(1, c) + cy * pose(2, c);
      p[8 + c] = pose(2, c);
    }

    MaskResult m;
    std::vector<Vec2> pixels;
    try
    {
      m = occlude_with_projection(sample, occluder.vertices, p);
      for (auto const & v : occluder.vertices)
      {
        double const s = p[8] * v[0] + p[9] * v[1] + p[10] * v[2] + p[11];
        pixels.push_back({(p[0] * v[0] + p[1] * v[1] + p[2] * v[2] + p[3]) / s,
                          (p[4] * v[0] + p[5] * v[1] + p[6] * v[2] + p[7]) / s});
      }
    }
    catch (GeometryError const &)
    {
      continue;
    }
    double plo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double phi[2] = {-plo[0], -plo[1]};
    for (auto const & q : pixels)
      for (std::size_t b = 0; b < 2; ++b)
      {
        plo[b] = std::min(plo[b], q[b]);
        phi[b] = std::max(phi[b], q[b]);
      }
    bool const overlap = plo[0] <= hi[0] && lo[0] <= phi[0] && plo[1] <= hi[1] && lo[1] <= phi[1];
    last = Realistic2DResult{std::move(m.sample), m.snr, p, attempt + 1, overlap};
    if (overlap)
      return std::move(*last);
  }
  if (!last)
    throw OcclusionError("every random projection of the occluder was degenerate");
  return std::move(*last);
}

SkeletonSequence occlude_random(SkeletonSequence const & sample, double gamma, std::mt19937_64 & rng)
{
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("gamma must lie in (0, 1)");
  std::size_t const cells = sample.frames() * sample.joints();
  auto const count = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(cells)));
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SkeletonSequence out = sample;
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i)
  {
    std::uniform_int_distribution<std::size_t> pick(i, cells - 1);
    std::swap(order[i], order[pick(rng)]);
    out.occlude(order[i] / sample.joints(), order[i] % sample.joints());
  }
  return out;
}

SkeletonSequence occlude_temporal(SkeletonSequence const & sample, std::size_t n_frames, std::mt19937_64 & rng)
{
  if (n_frames >= sample.frames())
    throw ConfigError("n_frames must be smaller than T");
  std::vector<std::size_t> frames(sample.frames());
  std::iota(frames.begin(), frames.end(), std::size_t{0});
  SkeletonSequence out = sample;
  for (std::size_t i = 0; i < n_frames; ++i)
  {
    std::uniform_int_distribution<std::size_t> pick(i, frames.size() - 1);
    std::swap(frames[i], frames[pick(rng)]);
    for (std::size_t j = 0; j < sample.joints(); ++j)
      out.occlude(frames[i], j);
  }
  return out;
}

SkeletonSequence occlude_spatial(SkeletonSequence const & sample, std::size_t n_joints, std::mt19937_64 & rng)
{
  if (n_joints >= sample.joints())
    throw ConfigError("n_joints must be smaller than J");
  SkeletonSequence out = sample;
  std::vector<std::size_t> joints(sample.joints());
  for (std::size_t t = 0; t < sample.frames(); ++t)
  {
    std::iota(joints.begin(), joints.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_joints; ++i)
    {
      std::uniform_int_distribution<std::size_t> pick(i, joints.size() - 1);
      std::swap(joints[i], joints[pick(rng)]);
      out.occlude(t, joints[i]);
    }
  }
  return out;
}

std::vector<std::size_t> snr_histogram(Dataset const & dataset, std::span<double const> edges)
{
  if (edges.size() < 2)
    throw ConfigError("histogram needs at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1]))
      throw ConfigError("histogram bin edges must be strictly increasing");
  if (edges.front() > 0.0 || edges.back() < 1.0)
    throw ConfigError("histogram bin edges must cover [0, 1]");

  std::vector<std::size_t> counts(edges.size() - 1, 0);
  for (auto const & s : dataset.samples)
  {
    double const snr = snr_of(s);
    auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), snr) - edges.begin());
    bin = std::clamp<std::size_t>(bin, 1, counts.size()) - 1;
    ++counts[bin];
  }
  return counts;
}

std::vector<double> uniform_bin_edges(std::size_t bins)
{
  if (bins < 1)
    throw ConfigError("need at least one histogram bin");
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  return edges;
}

}  // namespace soar::occlusion
