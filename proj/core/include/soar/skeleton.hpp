#pragma once

#include "soar/linalg.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace soar {

struct SampleInfo {
  std::uint32_t label = 0;
  std::uint32_t camera_id = 0;
  // Samples sharing a group id show the same motion instance seen by
  // different cameras at the same time.
  std::uint32_t group_id = 0;
  std::uint32_t subject_id = 0;

  bool operator==(SampleInfo const &) const = default;
};

// A T x J x B joint-coordinate sequence with a T x J occlusion mask.
//
// Invariant: wherever mask(t, j) is set, all B coordinates of (t, j) are
// exactly zero. The only way to set a mask bit is occlude(), which zeroes
// the coordinates at the same time.
class SkeletonSequence {
public:
  SkeletonSequence() = default;
  SkeletonSequence(std::size_t frames, std::size_t joints, std::size_t dims, SampleInfo info = {});
  // Validates shapes and the mask/zero coupling; throws ValidationError.
  SkeletonSequence(std::size_t frames, std::size_t joints, std::size_t dims, std::vector<float> data,
                   std::vector<std::uint8_t> mask, SampleInfo info);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return joints_; }
  std::size_t dims() const { return dims_; }

  float at(std::size_t t, std::size_t j, std::size_t b) const { return data_[index(t, j, b)]; }
  Vec3 point(std::size_t t, std::size_t j) const;
  bool masked(std::size_t t, std::size_t j) const { return mask_[t * joints_ + j] != 0; }

  // Writing a non-zero value into a masked cell throws StateError.
  void set(std::size_t t, std::size_t j, std::size_t b, float value);
  void occlude(std::size_t t, std::size_t j);

  std::span<float const> data() const { return data_; }
  std::span<std::uint8_t const> mask() const { return mask_; }
  std::size_t masked_count() const;

  SampleInfo info;

  bool operator==(SkeletonSequence const &) const = default;

private:
  std::size_t index(std::size_t t, std::size_t j, std::size_t b) const { return (t * joints_ + j) * dims_ + b; }

  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  std::size_t dims_ = 0;
  std::vector<float> data_;
  std::vector<std::uint8_t> mask_;
};

// Bones are (child, parent) pairs; the bone vector is s_child - s_parent.
struct SkeletonTopology {
  std::size_t joint_count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> bones;

  // Throws ConfigError unless the bones form a spanning tree.
  void validate() const;
  // parent[j] for every joint; the root (joint 0) is its own parent.
  std::vector<std::size_t> parents() const;

  // Five limb chains (spine, two legs, two arms) grown round-robin from a
  // pelvis root, so every J >= 5 gets a connected stick figure.
  static SkeletonTopology stick_figure(std::size_t joints);

  bool operator==(SkeletonTopology const &) const = default;
};

struct Dataset {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t dims = 3;
  SkeletonTopology topology;
  std::vector<std::string> class_names;
  std::size_t camera_count = 1;
  // World -> camera rigid maps used by the generator. Empty when unknown.
  std::vector<Mat4> camera_poses;
  std::vector<SkeletonSequence> samples;

  void validate() const;
};

struct SynthConfig {
  std::size_t n_classes = 8;
  std::size_t samples_per_class = 20;
  std::size_t n_cameras = 1;
  std::size_t frames = 32;
  std::size_t joints = 25;
  std::size_t dims = 3;
  std::uint64_t seed = 0;
};

// Generates one parametric motion per class (sinusoidal joint trajectories
// around a stick-figure rest pose) and emits every motion instance once per
// camera. Axis 1 is vertical, axis 2 is the camera focus axis.
Dataset synth_dataset(SynthConfig const & config);

// Pinhole projection of a 3D dataset to pixel coordinates (B = 2).
Dataset project_to_image_plane(Dataset const & dataset, double focal = 500.0, double cx = 320.0,
                               double cy = 240.0);

struct OneShotSplit {
  std::vector<std::uint32_t> base_classes;
  std::vector<std::uint32_t> novel_classes;
  std::vector<SkeletonSequence> train;
  std::vector<SkeletonSequence> support;
  std::vector<SkeletonSequence> test;
};

// One seeded-random support sample per novel class; the rest of the novel
// samples form the test set and every base sample goes to train.
OneShotSplit make_one_shot_split(Dataset const & dataset, std::vector<std::uint32_t> const & base_classes,
                                 std::vector<std::uint32_t> const & novel_classes, std::uint64_t seed);

struct SplitPreset {
  std::string name;
  std::size_t base_count;
  std::size_t novel_count;
};

// Class-count presets of the public one-shot benchmarks: ntu120, ntu60, toyota.
SplitPreset split_preset(std::string const & name);
std::vector<SplitPreset> split_presets();

}  // namespace soar
