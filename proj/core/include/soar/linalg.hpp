#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace soar {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

// Row-major 4x4 matrix acting on homogeneous column vectors.
struct Mat4 {
  std::array<double, 16> m{};

  static Mat4 identity()
  {
    Mat4 r;
    r(0, 0) = r(1, 1) = r(2, 2) = r(3, 3) = 1.0;
    return r;
  }

  double & operator()(std::size_t r, std::size_t c) { return m[r * 4 + c]; }
  double operator()(std::size_t r, std::size_t c) const { return m[r * 4 + c]; }

  Mat4 operator*(Mat4 const & o) const
  {
    Mat4 r;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 4; ++k)
      {
        double const a = (*this)(i, k);
        for (std::size_t j = 0; j < 4; ++j)
          r(i, j) += a * o(k, j);
      }
    return r;
  }

  // Maps a point (w = 1) and de-homogeneousizes the result.
  Vec3 apply(Vec3 const & p) const
  {
    Vec3 out{};
    for (std::size_t r = 0; r < 3; ++r)
      out[r] = (*this)(r, 0) * p[0] + (*this)(r, 1) * p[1] + (*this)(r, 2) * p[2] + (*this)(r, 3);
    double const w = (*this)(3, 0) * p[0] + (*this)(3, 1) * p[1] + (*this)(3, 2) * p[2] + (*this)(3, 3);
    if (w != 1.0)
      for (auto & v : out)
        v /= w;
    return out;
  }
};

// Rotation about the vertical axis (axis 1) followed by a translation.
inline Mat4 yaw_translation(double yaw, Vec3 const & t)
{
  Mat4 r = Mat4::identity();
  double const c = std::cos(yaw);
  double const s = std::sin(yaw);
  r(0, 0) = c;
  r(0, 2) = s;
  r(2, 0) = -s;
  r(2, 2) = c;
  r(0, 3) = t[0];
  r(1, 3) = t[1];
  r(2, 3) = t[2];
  return r;
}

// Inverse of a rigid transform (orthonormal rotation block).
inline Mat4 rigid_inverse(Mat4 const & a)
{
  Mat4 r = Mat4::identity();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      r(i, j) = a(j, i);
  for (std::size_t i = 0; i < 3; ++i)
    r(i, 3) = -(r(i, 0) * a(0, 3) + r(i, 1) * a(1, 3) + r(i, 2) * a(2, 3));
  return r;
}

}  // namespace soar
