#include "soar/geometry.hpp"

#include "soar/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace soar::geometry {

void AffineCalibration::validate() const
{
  for (double v : matrix.m)
    if (!std::isfinite(v))
      throw GeometryError("calibration matrix has non-finite entries");
  if (std::abs(matrix(3, 0)) > 1e-9 || std::abs(matrix(3, 1)) > 1e-9 || std::abs(matrix(3, 2)) > 1e-9 ||
      std::abs(matrix(3, 3) - 1.0) > 1e-9)
    throw GeometryError("calibration matrix is not affine (last row != 0 0 0 1)");
}

CalibrationFit estimate_calibration(std::span<Vec3 const> from, std::span<Vec3 const> to)
{
  if (from.size() != to.size())
    throw GeometryError("calibration needs matching point lists");
  if (from.size() < 4)
    throw GeometryError("calibration needs at least four correspondences");

  auto const m = static_cast<Eigen::Index>(from.size());
  Eigen::MatrixXd x(m, 4);
  Eigen::MatrixXd y(m, 3);
  for (Eigen::Index i = 0; i < m; ++i)
  {
    auto const & p = from[static_cast<std::size_t>(i)];
    auto const & q = to[static_cast<std::size_t>(i)];
    x.row(i) << p[0], p[1], p[2], 1.0;
    y.row(i) << q[0], q[1], q[2];
  }

  // Same minimiser as the normal equations (X^T X)^-1 X^T Y, without
  // squaring the condition number.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4)
    throw GeometryError("singular calibration system: correspondences are coplanar or degenerate (rank " +
                        std::to_string(qr.rank()) + ")");
  Eigen::MatrixXd const f = qr.solve(y);  // 4 x 3, row-vector convention

  CalibrationFit fit;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      fit.calibration.matrix(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = f(c, r);
  fit.calibration.validate();
  double const sq = (x * f - y).squaredNorm();
  fit.residual_rms = std::sqrt(sq / static_cast<double>(m));
  return fit;
}

std::vector<Vec3> apply_calibration(AffineCalibration const & f, std::span<Vec3 const> points)
{
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (auto const & p : points)
    out.push_back(f.apply(p));
  return out;
}

AugmentedMesh place_mesh(std::span<Vec3 const> mesh, SkeletonSequence const & skeleton, double yaw, double tx,
                         double tz)
{
  if (mesh.size() < 4)
    throw GeometryError("occluder mesh needs at least four vertices");
  Box3 const skel = bounding_box(skeleton);
  double mesh_min = std::numeric_limits<double>::infinity();
  for (auto const & v : mesh)
    mesh_min = std::min(mesh_min, v[1]);  // yaw keeps heights

  AugmentedMesh out;
  out.augment.yaw = yaw;
  out.augment.translation = {tx, skel.lo[1] - mesh_min, tz};
  Mat4 const m = out.augment.matrix();
  out.vertices.reserve(mesh.size());
  for (auto const & v : mesh)
    out.vertices.push_back(m.apply(v));
  return out;
}

AugmentedMesh rigid_augment(std::span<Vec3 const> mesh, SkeletonSequence const & skeleton, std::mt19937_64 & rng,
                            AugmentConfig const & config)
{
  if (!(config.min_radius >= 0.0 && config.max_radius >= config.min_radius))
    throw ConfigError("augment radii must satisfy 0 <= min <= max");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double const yaw = angle(rng);
  double const theta = angle(rng);
  // Area-uniform radius inside the annulus.
  double const r2lo = config.min_radius * config.min_radius;
  double const r2hi = config.max_radius * config.max_radius;
  double const radius = std::sqrt(r2lo + (r2hi - r2lo) * unit(rng));

  Box3 const skel = bounding_box(skeleton);
  double const sx = 0.5 * (skel.lo[0] + skel.hi[0]);
  double const sz = 0.5 * (skel.lo[2] + skel.hi[2]);

  // Horizontal centre of the rotated mesh.
  Mat4 const rot = yaw_translation(yaw, {0.0, 0.0, 0.0});
  double cx = 0.0;
  double cz = 0.0;
  for (auto const & v : mesh)
  {
    Vec3 const w = rot.apply(v);
    cx += w[0];
    cz += w[2];
  }
  cx /= static_cast<double>(mesh.size());
  cz /= static_cast<double>(mesh.size());

  return place_mesh(mesh, skeleton, yaw, sx - cx + radius * std::cos(theta), sz - cz + radius * std::sin(theta));
}

std::vector<Vec2> perspective_project(std::span<Vec3 const> points)
{
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
  {
    auto const & p = points[i];
    if (!(p[2] > kDepthEpsilon))
      throw GeometryError("point " + std::to_string(i) + " lies at or behind the camera plane");
    out.push_back({p[0] / p[2], p[1] / p[2]});
  }
  return out;
}

namespace {

double cross(Vec2 const & o, Vec2 const & a, Vec2 const & b)
{
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

}  // namespace

ConvexHull2D::ConvexHull2D(std::vector<Vec2> ccw_vertices) : vertices_(std::move(ccw_vertices))
{
  std::size_t const n = vertices_.size();
  if (n < 3)
    throw GeometryError("convex hull needs at least three vertices");
  a_.resize(n);
  b_.resize(n);
  for (std::size_t i = 0; i < n; ++i)
  {
    Vec2 const & p = vertices_[i];
    Vec2 const & q = vertices_[(i + 1) % n];
    double const dx = q[0] - p[0];
    double const dy = q[1] - p[1];
    double const len = std::hypot(dx, dy);
    if (len == 0.0)
      throw GeometryError("convex hull has a zero-length edge");
    a_[i] = {dy / len, -dx / len};
    b_[i] = -(a_[i][0] * p[0] + a_[i][1] * p[1]);
  }

  Vec2 centroid{0.0, 0.0};
  for (auto const & v : vertices_)
  {
    centroid[0] += v[0] / static_cast<double>(n);
    centroid[1] += v[1] / static_cast<double>(n);
  }
  if (!(max_violation(centroid) < 0.0))
    throw GeometryError("convex hull is degenerate or not counter-clockwise");
  for (auto const & v : vertices_)
    if (max_violation(v) > kHullTolerance)
      throw GeometryError("convex hull vertices violate their own half-spaces (not convex)");
}

double ConvexHull2D::max_violation(Vec2 const & p) const
{
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a_.size(); ++i)
    worst = std::max(worst, a_[i][0] * p[0] + a_[i][1] * p[1] + b_[i]);
  return worst;
}

ConvexHull2D convex_hull_2d(std::span<Vec2 const> points)
{
  std::vector<Vec2> pts(points.begin(), points.end());
  for (auto const & p : pts)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
      throw GeometryError("convex hull input contains non-finite points");
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3)
    throw GeometryError("convex hull needs at least three distinct points");

  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (auto const & p : pts)
  {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0)
      --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;)
  {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0)
      --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3)
    throw GeometryError("convex hull input is collinear");
  return ConvexHull2D(std::move(hull));
}

bool is_in_hull(ConvexHull2D const & hull, Vec2 const & p, double tolerance)
{
  auto const & a = hull.normals();
  auto const & b = hull.offsets();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i][0] * p[0] + a[i][1] * p[1] + b[i] > tolerance)
      return false;
  return true;
}

Box3 bounding_box(std::span<Vec3 const> points)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  Box3 box{{inf, inf, inf}, {-inf, -inf, -inf}};
  for (auto const & p : points)
    for (std::size_t k = 0; k < 3; ++k)
    {
      box.lo[k] = std::min(box.lo[k], p[k]);
      box.hi[k] = std::max(box.hi[k], p[k]);
    }
  return box;
}

Box3 bounding_box(SkeletonSequence const & skeleton)
{
  std::vector<Vec3> pts;
  pts.reserve(skeleton.frames() * skeleton.joints());
  for (std::size_t t = 0; t < skeleton.frames(); ++t)
    for (std::size_t j = 0; j < skeleton.joints(); ++j)
      if (!skeleton.masked(t, j))
        pts.push_back(skeleton.point(t, j));
  if (pts.empty())
    throw GeometryError("skeleton has no visible joints");
  return bounding_box(pts);
}

}  // namespace soar::geometry
