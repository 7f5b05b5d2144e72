#pragma once

// Independent reference implementations used to check the library.

#include "soar/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

namespace soar::oracle {

// Winding number of a closed polygon around p (non-zero means inside).
inline int winding_number(std::span<Vec2 const> poly, Vec2 const & p)
{
  int wn = 0;
  std::size_t const n = poly.size();
  for (std::size_t i = 0; i < n; ++i)
  {
    Vec2 const a = poly[i];
    Vec2 const b = poly[(i + 1) % n];
    double const cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
    if (a[1] <= p[1])
    {
      if (b[1] > p[1] && cross > 0)
        ++wn;
    }
    else if (b[1] <= p[1] && cross < 0)
      --wn;
  }
  return wn;
}

// Brute-force hull membership: p lies on the inner side of every edge
// formed by some pair of input points that has all points on one side.
inline bool in_hull_brute_force(std::span<Vec2 const> pts, Vec2 const & p, double tol = 1e-12)
{
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j)
    {
      if (i == j)
        continue;
      Vec2 const a = pts[i], b = pts[j];
      auto side = [&](Vec2 const & q) { return (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]); };
      bool supporting = true;
      for (auto const & q : pts)
        if (side(q) < -tol)
        {
          supporting = false;
          break;
        }
      if (supporting && side(p) < -tol)
        return false;
    }
  return true;
}

// Per-class mean: rows summed in dataset order, then divided by the count.
inline std::map<std::uint32_t, std::vector<double>> class_means(std::span<std::uint32_t const> labels,
                                                              std::vector<std::vector<double>> const & rows)
{
  std::map<std::uint32_t, std::vector<double>> sums;
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i)
  {
    auto & s = sums[labels[i]];
    if (s.empty())
      s.assign(rows[i].size(), 0.0);
    for (std::size_t k = 0; k < s.size(); ++k)
      s[k] += rows[i][k];
    ++counts[labels[i]];
  }
  for (auto & [c, s] : sums)
    for (auto & v : s)
      v /= static_cast<double>(counts[c]);
  return sums;
}

}  // namespace soar::oracle
