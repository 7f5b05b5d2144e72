#include "soar/skeleton.hpp"

#include "soar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace soar {

SkeletonSequence::SkeletonSequence(std::size_t frames, std::size_t joints, std::size_t dims, SampleInfo info_)
  : info(info_), frames_(frames), joints_(joints), dims_(dims), data_(frames * joints * dims, 0.0f),
    mask_(frames * joints, 0)
{
  if (frames < 2 || joints < 2 || (dims != 2 && dims != 3))
    throw ValidationError("skeleton sequence needs T >= 2, J >= 2 and B in {2, 3}");
}

SkeletonSequence::SkeletonSequence(std::size_t frames, std::size_t joints, std::size_t dims,
                                   std::vector<float> data, std::vector<std::uint8_t> mask, SampleInfo info_)
  : info(info_), frames_(frames), joints_(joints), dims_(dims), data_(std::move(data)), mask_(std::move(mask))
{
  if (frames < 2 || joints < 2 || (dims != 2 && dims != 3))
    throw ValidationError("skeleton sequence needs T >= 2, J >= 2 and B in {2, 3}");
  if (data_.size() != frames * joints * dims || mask_.size() != frames * joints)
    throw ValidationError("skeleton sequence storage does not match its shape");
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t j = 0; j < joints_; ++j)
    {
      std::uint8_t const m = mask_[t * joints_ + j];
      if (m > 1)
        throw ValidationError("mask entries must be 0 or 1");
      if (m == 0)
        continue;
      for (std::size_t b = 0; b < dims_; ++b)
        if (data_[index(t, j, b)] != 0.0f)
          throw ValidationError("masked joint (" + std::to_string(t) + ", " + std::to_string(j) +
                                ") has non-zero coordinates");
    }
}

Vec3 SkeletonSequence::point(std::size_t t, std::size_t j) const
{
  Vec3 p{0.0, 0.0, 0.0};
  for (std::size_t b = 0; b < dims_; ++b)
    p[b] = data_[index(t, j, b)];
  return p;
}

void SkeletonSequence::set(std::size_t t, std::size_t j, std::size_t b, float value)
{
  if (masked(t, j) && value != 0.0f)
    throw StateError("cannot write a non-zero coordinate into a masked joint");
  data_[index(t, j, b)] = value;
}

void SkeletonSequence::occlude(std::size_t t, std::size_t j)
{
  mask_[t * joints_ + j] = 1;
  for (std::size_t b = 0; b < dims_; ++b)
    data_[index(t, j, b)] = 0.0f;
}

std::size_t SkeletonSequence::masked_count() const
{
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

void SkeletonTopology::validate() const
{
  if (joint_count < 2)
    throw ConfigError("topology needs at least two joints");
  if (bones.size() != joint_count - 1)
    throw ConfigError("topology must be a tree with J - 1 bones");
  // Union-find: a cycle-free set of J - 1 edges over J nodes spans the graph.
  std::vector<std::size_t> root(joint_count);
  for (std::size_t i = 0; i < joint_count; ++i)
    root[i] = i;
  auto find = [&](std::size_t x) {
    while (root[x] != x)
      x = root[x] = root[root[x]];
    return x;
  };
  for (auto const & [a, b] : bones)
  {
    if (a >= joint_count || b >= joint_count || a == b)
      throw ConfigError("bone references an invalid joint pair");
    std::size_t const ra = find(a);
    std::size_t const rb = find(b);
    if (ra == rb)
      throw ConfigError("bone graph contains a cycle");
    root[ra] = rb;
  }
}

std::vector<std::size_t> SkeletonTopology::parents() const
{
  validate();
  std::vector<std::vector<std::size_t>> adjacent(joint_count);
  for (auto const & [a, b] : bones)
  {
    adjacent[a].push_back(b);
    adjacent[b].push_back(a);
  }
  std::vector<std::size_t> parent(joint_count, joint_count);
  parent[0] = 0;
  std::vector<std::size_t> stack{0};
  while (!stack.empty())
  {
    std::size_t const u = stack.back();
    stack.pop_back();
    for (std::size_t v : adjacent[u])
      if (parent[v] == joint_count)
      {
        parent[v] = u;
        stack.push_back(v);
      }
  }
  return parent;
}

namespace {

enum Chain : std::size_t { kSpine = 0, kLeftLeg, kRightLeg, kLeftArm, kRightArm, kChainCount };

struct Figure {
  std::vector<std::size_t> chain;     // chain id per joint (root has kChainCount)
  std::vector<std::size_t> position;  // index within chain
  std::vector<std::size_t> chain_len;
};

Figure layout(std::size_t joints)
{
  Figure f;
  f.chain.assign(joints, kChainCount);
  f.position.assign(joints, 0);
  f.chain_len.assign(kChainCount, 0);
  for (std::size_t k = 1; k < joints; ++k)
  {
    std::size_t const c = (k - 1) % kChainCount;
    f.chain[k] = c;
    f.position[k] = f.chain_len[c]++;
  }
  return f;
}

Vec3 rest_position(Figure const & f, std::size_t joint)
{
  if (joint == 0)
    return {0.0, 1.0, 0.0};
  std::size_t const c = f.chain[joint];
  double const n = static_cast<double>(f.chain_len[c]);
  double const i = static_cast<double>(f.position[joint]);
  double const frac = (i + 1.0) / n;
  switch (c)
  {
  case kSpine:
    return {0.0, n > 1.0 ? 1.5 + 0.25 * i / (n - 1.0) : 1.5, 0.0};
  case kLeftLeg:
    return {-0.15, 1.0 - frac, 0.0};
  case kRightLeg:
    return {0.15, 1.0 - frac, 0.0};
  case kLeftArm:
    return {-0.2 - 0.55 * frac, 1.5 - 0.1 * frac, 0.0};
  default:
    return {0.2 + 0.55 * frac, 1.5 - 0.1 * frac, 0.0};
  }
}

// Extremities swing more than joints close to the root.
double swing_scale(Figure const & f, std::size_t joint)
{
  if (joint == 0)
    return 0.03;
  std::size_t const c = f.chain[joint];
  double const frac = (static_cast<double>(f.position[joint]) + 1.0) / static_cast<double>(f.chain_len[c]);
  if (c == kSpine)
    return 0.05;
  return 0.05 + 0.3 * frac;
}

struct ClassMotion {
  double frequency;                    // cycles per sequence
  Vec3 drift;                          // root displacement over the sequence
  std::vector<Vec3> amplitude;         // per joint
  std::vector<Vec3> phase;             // per joint
};

ClassMotion class_motion(std::uint64_t seed, std::size_t label, Figure const & f, std::size_t joints)
{
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL * (label + 1));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  ClassMotion m;
  m.frequency = 0.5 + 0.5 * static_cast<double>(label % 5);
  m.drift = {0.4 * unit(rng), 0.0, 0.4 * unit(rng)};
  m.amplitude.resize(joints);
  m.phase.resize(joints);
  for (std::size_t j = 0; j < joints; ++j)
  {
    double const s = swing_scale(f, j);
    m.amplitude[j] = {s * unit(rng), s * unit(rng), s * unit(rng)};
    m.phase[j] = {angle(rng), angle(rng), angle(rng)};
  }
  return m;
}

Mat4 camera_pose(std::size_t camera, std::size_t n_cameras)
{
  double const centre = (static_cast<double>(n_cameras) - 1.0) / 2.0;
  double const yaw = (static_cast<double>(camera) - centre) * (std::numbers::pi / 4.0);
  return yaw_translation(yaw, {0.0, -1.0, 3.0 + 0.25 * static_cast<double>(camera)});
}

}  // namespace

SkeletonTopology SkeletonTopology::stick_figure(std::size_t joints)
{
  if (joints < 5)
    throw ConfigError("stick figure needs at least 5 joints");
  Figure const f = layout(joints);
  SkeletonTopology topo;
  topo.joint_count = joints;
  std::vector<std::size_t> last_in_chain(kChainCount, 0);
  for (std::size_t k = 1; k < joints; ++k)
  {
    std::size_t const c = f.chain[k];
    std::size_t parent = last_in_chain[c];
    if (f.position[k] == 0 && (c == kLeftArm || c == kRightArm))
      parent = 1;  // shoulders hang off the neck
    topo.bones.emplace_back(k, parent);
    last_in_chain[c] = k;
  }
  return topo;
}

void Dataset::validate() const
{
  if (frames < 2 || joints < 2 || (dims != 2 && dims != 3))
    throw ValidationError("dataset needs T >= 2, J >= 2 and B in {2, 3}");
  if (topology.joint_count != joints)
    throw ValidationError("topology joint count does not match the dataset");
  topology.validate();
  for (auto const & s : samples)
  {
    if (s.frames() != frames || s.joints() != joints || s.dims() != dims)
      throw ValidationError("sample shape does not match the dataset header");
    if (!class_names.empty() && s.info.label >= class_names.size())
      throw ValidationError("sample label outside the class table");
    if (s.info.camera_id >= camera_count)
      throw ValidationError("sample camera id outside the camera table");
  }
}

Dataset synth_dataset(SynthConfig const & cfg)
{
  if (cfg.n_classes < 2 || cfg.n_cameras < 1 || cfg.joints < 5 || cfg.frames < 2 || cfg.samples_per_class < 1 ||
      (cfg.dims != 2 && cfg.dims != 3))
    throw ConfigError("synth_dataset: need classes >= 2, cameras >= 1, joints >= 5, frames >= 2, "
                      "per-class >= 1 and dims in {2, 3}");

  Figure const fig = layout(cfg.joints);
  Dataset ds;
  ds.frames = cfg.frames;
  ds.joints = cfg.joints;
  ds.dims = 3;
  ds.topology = SkeletonTopology::stick_figure(cfg.joints);
  ds.camera_count = cfg.n_cameras;
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    ds.class_names.push_back("action_" + std::to_string(c));
  for (std::size_t k = 0; k < cfg.n_cameras; ++k)
    ds.camera_poses.push_back(camera_pose(k, cfg.n_cameras));

  std::vector<Vec3> rest(cfg.joints);
  for (std::size_t j = 0; j < cfg.joints; ++j)
    rest[j] = rest_position(fig, j);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.01);

  std::vector<Vec3> world(cfg.frames * cfg.joints);
  std::uint32_t group = 0;
  for (std::size_t label = 0; label < cfg.n_classes; ++label)
  {
    ClassMotion const motion = class_motion(cfg.seed, label, fig, cfg.joints);
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s, ++group)
    {
      std::uint32_t const subject = static_cast<std::uint32_t>(s % 10);
      double const body = 0.9 + 0.02 * static_cast<double>(subject);
      double const amp = 1.0 + 0.15 * unit(rng);
      double const phase_shift = 0.3 * unit(rng);
      double const freq = motion.frequency * (1.0 + 0.05 * unit(rng));
      double const facing = 0.3 * unit(rng);
      Vec3 const offset{0.3 * unit(rng), 0.0, 0.3 * unit(rng)};
      Mat4 const place = yaw_translation(facing, offset);

      for (std::size_t t = 0; t < cfg.frames; ++t)
      {
        double const tau = static_cast<double>(t) / static_cast<double>(cfg.frames);
        double const arg = 2.0 * std::numbers::pi * freq * tau + phase_shift;
        for (std::size_t j = 0; j < cfg.joints; ++j)
        {
          Vec3 p{};
          for (std::size_t b = 0; b < 3; ++b)
            p[b] = body * rest[j][b] + amp * motion.amplitude[j][b] * std::sin(arg + motion.phase[j][b]) +
                   motion.drift[b] * tau + noise(rng);
          world[t * cfg.joints + j] = place.apply(p);
        }
      }

      for (std::size_t cam = 0; cam < cfg.n_cameras; ++cam)
      {
        SampleInfo info{static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(cam), group, subject};
        std::vector<float> data(cfg.frames * cfg.joints * 3);
        for (std::size_t i = 0; i < world.size(); ++i)
        {
          Vec3 const q = ds.camera_poses[cam].apply(world[i]);
          for (std::size_t b = 0; b < 3; ++b)
            data[i * 3 + b] = static_cast<float>(q[b]);
        }
        ds.samples.emplace_back(cfg.frames, cfg.joints, 3, std::move(data),
                                std::vector<std::uint8_t>(cfg.frames * cfg.joints, 0), info);
      }
    }
  }
  if (cfg.dims == 2)
    return project_to_image_plane(ds);
  return ds;
}

Dataset project_to_image_plane(Dataset const & dataset, double focal, double cx, double cy)
{
  if (dataset.dims != 3)
    throw ConfigError("project_to_image_plane expects a 3D dataset");
  Dataset out = dataset;
  out.dims = 2;
  out.samples.clear();
  for (auto const & s : dataset.samples)
  {
    std::vector<float> data(s.frames() * s.joints() * 2, 0.0f);
    std::vector<std::uint8_t> mask(s.mask().begin(), s.mask().end());
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t j = 0; j < s.joints(); ++j)
      {
        if (s.masked(t, j))
          continue;
        Vec3 const p = s.point(t, j);
        if (p[2] <= 1e-6)
          throw GeometryError("joint behind the camera plane during image projection");
        std::size_t const i = (t * s.joints() + j) * 2;
        data[i] = static_cast<float>(focal * p[0] / p[2] + cx);
        data[i + 1] = static_cast<float>(cy - focal * p[1] / p[2]);
      }
    out.samples.emplace_back(s.frames(), s.joints(), 2, std::move(data), std::move(mask), s.info);
  }
  return out;
}

OneShotSplit make_one_shot_split(Dataset const & dataset, std::vector<std::uint32_t> const & base_classes,
                                 std::vector<std::uint32_t> const & novel_classes, std::uint64_t seed)
{
  std::set<std::uint32_t> const base(base_classes.begin(), base_classes.end());
  std::set<std::uint32_t> const novel(novel_classes.begin(), novel_classes.end());
  if (base.size() != base_classes.size() || novel.size() != novel_classes.size())
    throw SplitError("class id lists contain duplicates");
  if (novel.empty())
    throw SplitError("at least one novel class is required");
  for (auto c : base)
    if (novel.contains(c))
      throw SplitError("class " + std::to_string(c) + " is both base and novel");

  OneShotSplit split;
  split.base_classes.assign(base.begin(), base.end());
  split.novel_classes.assign(novel.begin(), novel.end());

  std::vector<std::vector<std::size_t>> by_novel(split.novel_classes.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
  {
    auto const label = dataset.samples[i].info.label;
    if (base.contains(label))
      split.train.push_back(dataset.samples[i]);
    else if (novel.contains(label))
    {
      auto const pos = std::lower_bound(split.novel_classes.begin(), split.novel_classes.end(), label) -
                       split.novel_classes.begin();
      by_novel[static_cast<std::size_t>(pos)].push_back(i);
    }
  }

  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_novel.size(); ++c)
  {
    auto const & idx = by_novel[c];
    if (idx.size() < 2)
      throw SplitError("novel class " + std::to_string(split.novel_classes[c]) +
                       " needs at least two samples (support + test)");
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    std::size_t const chosen = pick(rng);
    for (std::size_t k = 0; k < idx.size(); ++k)
    {
      if (k == chosen)
        split.support.push_back(dataset.samples[idx[k]]);
      else
        split.test.push_back(dataset.samples[idx[k]]);
    }
  }
  return split;
}

std::vector<SplitPreset> split_presets()
{
  return {{"ntu120", 100, 20}, {"ntu60", 48, 12}, {"toyota", 24, 7}};
}

SplitPreset split_preset(std::string const & name)
{
  for (auto const & p : split_presets())
    if (p.name == name)
      return p;
  throw ConfigError("unknown split preset '" + name + "'");
}

}  // namespace soar
