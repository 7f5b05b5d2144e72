#pragma once

#include "soar/linalg.hpp"
#include "soar/skeleton.hpp"

#include <random>
#include <span>
#include <vector>

namespace soar::geometry {

inline constexpr double kDepthEpsilon = 1e-6;
inline constexpr double kHullTolerance = 1e-9;

// Homogeneous 4x4 map from camera i coordinates to camera j coordinates.
// The last row is (0, 0, 0, 1).
struct AffineCalibration {
  Mat4 matrix = Mat4::identity();

  // Throws GeometryError on a non-affine last row or non-finite entries.
  void validate() const;
  Vec3 apply(Vec3 const & p) const { return matrix.apply(p); }
  // (*this) after `first`.
  AffineCalibration after(AffineCalibration const & first) const { return {matrix * first.matrix}; }
};

struct CalibrationFit {
  AffineCalibration calibration;
  double residual_rms = 0.0;
};

// Least-squares affine fit mapping `from[m]` onto `to[m]` (12 free
// parameters, solved with a column-pivoting QR of the homogeneous design
// matrix). Throws GeometryError when fewer than four non-coplanar points
// are supplied.
CalibrationFit estimate_calibration(std::span<Vec3 const> from, std::span<Vec3 const> to);

std::vector<Vec3> apply_calibration(AffineCalibration const & f, std::span<Vec3 const> points);

struct RigidAugment {
  double yaw = 0.0;  // radians about the vertical axis (axis 1)
  Vec3 translation{0.0, 0.0, 0.0};

  // Rotation first, then translation.
  Mat4 matrix() const { return yaw_translation(yaw, translation); }
};

struct AugmentConfig {
  // Horizontal placement is drawn uniformly from an annulus around the
  // skeleton's horizontal centroid.
  double min_radius = 0.5;
  double max_radius = 1.8;
};

struct AugmentedMesh {
  std::vector<Vec3> vertices;
  RigidAugment augment;
};

// Rotates the mesh by `yaw`, shifts it horizontally by (tx, tz) and picks the
// vertical offset so the lowest vertex sits at the lowest unmasked skeleton
// joint over all frames.
AugmentedMesh place_mesh(std::span<Vec3 const> mesh, SkeletonSequence const & skeleton, double yaw, double tx,
                         double tz);

// Random yaw in [0, 2pi) and a random horizontal position in the annulus
// around the skeleton, then vertical ground alignment.
AugmentedMesh rigid_augment(std::span<Vec3 const> mesh, SkeletonSequence const & skeleton, std::mt19937_64 & rng,
                            AugmentConfig const & config = {});

// x* = (x1 / x3, x2 / x3). Throws GeometryError naming the first point with
// x3 <= kDepthEpsilon.
std::vector<Vec2> perspective_project(std::span<Vec3 const> points);

// Convex polygon in counter-clockwise order with its half-space form
// A p + b <= 0 (unit outward normals, so A p + b is a signed distance).
class ConvexHull2D {
public:
  explicit ConvexHull2D(std::vector<Vec2> ccw_vertices);

  std::vector<Vec2> const & vertices() const { return vertices_; }
  std::vector<Vec2> const & normals() const { return a_; }
  std::vector<double> const & offsets() const { return b_; }
  std::size_t size() const { return vertices_.size(); }

  // Largest A_i p + b_i; <= 0 inside.
  double max_violation(Vec2 const & p) const;

private:
  std::vector<Vec2> vertices_;
  std::vector<Vec2> a_;
  std::vector<double> b_;
};

// Andrew's monotone chain. Collinear boundary points are dropped. Throws
// GeometryError for fewer than three non-collinear points.
ConvexHull2D convex_hull_2d(std::span<Vec2 const> points);

// Boundary counts as inside.
bool is_in_hull(ConvexHull2D const & hull, Vec2 const & p, double tolerance = kHullTolerance);

struct Box3 {
  Vec3 lo;
  Vec3 hi;

  bool disjoint(Box3 const & o) const
  {
    for (std::size_t k = 0; k < 3; ++k)
      if (hi[k] < o.lo[k] || o.hi[k] < lo[k])
        return true;
    return false;
  }
};

Box3 bounding_box(std::span<Vec3 const> points);
// Box over every unmasked joint of every frame.
Box3 bounding_box(SkeletonSequence const & skeleton);

}  // namespace soar::geometry
