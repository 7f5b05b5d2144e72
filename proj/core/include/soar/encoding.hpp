#pragma once

#include "soar/skeleton.hpp"

#include <cstddef>
#include <vector>

namespace soar::encoding {

// Dense rows x cols x channels array (row-major, channels fastest). Used for
// T x K x B skeleton streams and H x W x B images alike.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, std::size_t ch, double fill = 0.0)
    : rows(r), cols(c), channels(ch), values(r * c * ch, fill)
  {
  }

  double & at(std::size_t r, std::size_t c, std::size_t ch) { return values[(r * cols + c) * channels + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const { return values[(r * cols + c) * channels + ch]; }

  bool operator==(Grid const &) const = default;
};

Grid joints(SkeletonSequence const & seq);

// v_t = s_t - s_{t-1}; v_0 = 0.
Grid velocities(SkeletonSequence const & seq);

// One column per topology edge (child, parent): s_child - s_parent.
Grid bones(SkeletonSequence const & seq, SkeletonTopology const & topology);

// Channelwise bilinear resampling of the rows x cols grid onto height x
// width with corner-aligned sampling. Occluded (zero) cells are treated as
// ordinary zeros.
Grid to_image(Grid const & stream, std::size_t height, std::size_t width);

struct Patches {
  std::size_t count = 0;   // (H / P) * (W / P)
  std::size_t length = 0;  // P * P * B
  std::vector<double> values;
};

// Non-overlapping P x P patches in row-major order, each flattened as
// (row, col, channel).
Patches to_patches(Grid const & image, std::size_t patch);
Grid from_patches(Patches const & patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch);

struct EncodedSample {
  Grid joints;
  Grid velocities;
  Grid bones;
  std::size_t patch = 0;
};

// The three image-like streams, all height x width x B.
EncodedSample encode(SkeletonSequence const & seq, SkeletonTopology const & topology, std::size_t height,
                     std::size_t width, std::size_t patch);

}  // namespace soar::encoding
