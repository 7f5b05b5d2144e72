#pragma once

#include "soar/geometry.hpp"
#include "soar/skeleton.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace soar::occlusion {

struct OccluderModel {
  std::string name;
  std::vector<Vec3> vertices;  // metres

  // V >= 4 and finite, bounded (< 100 m) extents.
  void validate() const;
};

// Boxes, table-like and chair-like vertex clouds (8 to 48 vertices), centred
// horizontally on the origin with their bottom at height 0.
std::vector<OccluderModel> procedural_occluders(std::uint64_t seed, std::size_t count = 12);

// Text file, one "x y z" triple per line; blank lines and '#' comments are
// skipped.
OccluderModel load_occluder(std::filesystem::path const & path);
// Every regular file in `dir`, in lexicographic order.
std::vector<OccluderModel> load_occluder_dir(std::filesystem::path const & dir);

struct OcclusionConfig {
  double snr_min = 0.05;               // a
  double snr_max = 0.2;                // b
  std::size_t min_occluded_views = 1;  // T_Occ
  std::size_t max_retries = 25;        // T_Rep
  std::size_t max_placement_tries = 200;
  double gamma = 0.1;
  std::size_t n_frames = 10;
  std::size_t n_joints = 5;
  std::uint64_t seed = 0;
  geometry::AugmentConfig augment;

  // Throws ConfigError. T and J are checked against n_frames / n_joints.
  void validate(std::size_t frames, std::size_t joints) const;
};

// Fraction of masked cells: Sum(mask) / len(mask).
double snr_of(std::span<std::uint8_t const> mask);
inline double snr_of(SkeletonSequence const & s) { return snr_of(s.mask()); }

struct MaskResult {
  SkeletonSequence sample;
  double snr = 0.0;
};

// Projects the (camera-frame) occluder and every visible joint along the
// focus axis and masks the joints falling inside the occluder's hull. No
// depth test is applied: an occluder behind the person still masks.
MaskResult mask_by_occluder(SkeletonSequence const & sample, std::span<Vec3 const> occluder_in_camera);

// Calibrations keyed by (from camera, to camera).
using CalibrationSet = std::map<std::pair<std::uint32_t, std::uint32_t>, geometry::AffineCalibration>;

// Fits every ordered camera pair from the joints of samples that share a
// group id. Masked joints are skipped.
CalibrationSet estimate_calibrations(Dataset const & dataset);

struct GroupOcclusion {
  std::vector<SkeletonSequence> samples;
  std::vector<double> snr;
  std::vector<bool> in_range;
  // Occluder vertices expressed in each view's camera frame.
  std::vector<std::vector<Vec3>> occluder_views;
  std::size_t occluder_index = 0;
  geometry::RigidAugment augment;
  std::size_t attempts = 0;
  // True when no attempt reached min_occluded_views in-range views and the
  // best attempt was kept instead.
  bool exhausted = false;
};

// Realistic 3D occlusion of one multi-view group. The occluder is augmented
// in the frame of the group's first sample (the reference view) and carried
// to the other views with the calibrations.
GroupOcclusion occlude_realistic_3d(std::span<SkeletonSequence const> group, CalibrationSet const & calibrations,
                                    std::span<OccluderModel const> occluders, OcclusionConfig const & config,
                                    std::mt19937_64 & rng);

struct GroupReport {
  std::uint32_t group_id = 0;
  std::size_t attempts = 0;
  bool exhausted = false;
};

struct DatasetOcclusion {
  Dataset dataset;
  std::vector<double> snr;  // per sample, dataset order
  std::vector<GroupReport> groups;
};

// Applies occlude_realistic_3d to every group (ascending group id) with an
// RNG seeded from config.seed. Sample order is preserved.
DatasetOcclusion occlude_dataset_realistic_3d(Dataset const & dataset, CalibrationSet const & calibrations,
                                              std::span<OccluderModel const> occluders,
                                              OcclusionConfig const & config);

using Projection = std::array<double, 12>;  // row-major 3x4

// Projects the occluder with `projection` into the sample's pixel plane and
// masks joints inside its hull. Throws GeometryError for degenerate
// projections.
MaskResult occlude_with_projection(SkeletonSequence const & sample, std::span<Vec3 const> occluder,
                                   Projection const & projection);

struct Realistic2DConfig {
  double focal_min = 0.5;  // times the skeleton's pixel extent
  double focal_max = 2.0;
  double depth_min = 2.5;
  double depth_max = 5.0;
  std::size_t max_retries = 25;
};

struct Realistic2DResult {
  SkeletonSequence sample;
  double snr = 0.0;
  Projection projection{};
  std::size_t attempts = 0;
  bool overlapped = false;
};

Realistic2DResult occlude_realistic_2d(SkeletonSequence const & sample, OccluderModel const & occluder,
                                       std::mt19937_64 & rng, Realistic2DConfig const & config = {});

// Exactly round(gamma * T * J) distinct (t, j) cells, uniformly without
// replacement.
SkeletonSequence occlude_random(SkeletonSequence const & sample, double gamma, std::mt19937_64 & rng);
// n_frames distinct frames fully masked.
SkeletonSequence occlude_temporal(SkeletonSequence const & sample, std::size_t n_frames, std::mt19937_64 & rng);
// n_joints joints masked in every frame, drawn independently per frame.
SkeletonSequence occlude_spatial(SkeletonSequence const & sample, std::size_t n_joints, std::mt19937_64 & rng);

// Counts per bin [e_i, e_{i+1}); the last bin is closed. Edges must be
// strictly increasing and cover [0, 1].
std::vector<std::size_t> snr_histogram(Dataset const & dataset, std::span<double const> bin_edges);
std::vector<double> uniform_bin_edges(std::size_t bins);

}  // namespace soar::occlusion
