#include "soar/encoding.hpp"

#include "soar/errors.hpp"

#include <algorithm>

namespace soar::encoding {

Grid joints(SkeletonSequence const & seq)
{
  Grid g(seq.frames(), seq.joints(), seq.dims());
  auto const data = seq.data();
  std::copy(data.begin(), data.end(), g.values.begin());
  return g;
}

Grid velocities(SkeletonSequence const & seq)
{
  if (seq.frames() < 2)
    throw ConfigError("velocities need at least two frames");
  Grid g(seq.frames(), seq.joints(), seq.dims());
  for (std::size_t t = 1; t < seq.frames(); ++t)
    for (std::size_t j = 0; j < seq.joints(); ++j)
      for (std::size_t b = 0; b < seq.dims(); ++b)
        g.at(t, j, b) = static_cast<double>(seq.at(t, j, b)) - static_cast<double>(seq.at(t - 1, j, b));
  return g;
}

Grid bones(SkeletonSequence const & seq, SkeletonTopology const & topology)
{
  if (topology.joint_count != seq.joints())
    throw ConfigError("topology does not match the sequence's joint count");
  Grid g(seq.frames(), topology.bones.size(), seq.dims());
  for (std::size_t t = 0; t < seq.frames(); ++t)
    for (std::size_t e = 0; e < topology.bones.size(); ++e)
    {
      auto const [child, parent] = topology.bones[e];
      for (std::size_t b = 0; b < seq.dims(); ++b)
        g.at(t, e, b) = static_cast<double>(seq.at(t, child, b)) - static_cast<double>(seq.at(t, parent, b));
    }
  return g;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<Tap> taps(std::size_t src, std::size_t dst)
{
  std::vector<Tap> out(dst);
  for (std::size_t i = 0; i < dst; ++i)
  {
    if (src == 1 || dst == 1)
    {
      out[i] = {0, 0, 0.0};
      continue;
    }
    double const pos = static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
    auto lo = static_cast<std::size_t>(pos);
    lo = std::min(lo, src - 1);
    std::size_t const hi = std::min(lo + 1, src - 1);
    out[i] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return out;
}

}  // namespace

Grid to_image(Grid const & stream, std::size_t height, std::size_t width)
{
  if (height == 0 || width == 0 || stream.rows == 0 || stream.cols == 0)
    throw ConfigError("to_image needs non-empty source and target shapes");
  auto const ty = taps(stream.rows, height);
  auto const tx = taps(stream.cols, width);
  Grid img(height, width, stream.channels);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
    {
      auto const & [y0, y1, fy] = ty[y];
      auto const & [x0, x1, fx] = tx[x];
      for (std::size_t c = 0; c < stream.channels; ++c)
      {
        double const top = (1.0 - fx) * stream.at(y0, x0, c) + fx * stream.at(y0, x1, c);
        double const bottom = (1.0 - fx) * stream.at(y1, x0, c) + fx * stream.at(y1, x1, c);
        img.at(y, x, c) = (1.0 - fy) * top + fy * bottom;
      }
    }
  return img;
}

Patches to_patches(Grid const & image, std::size_t patch)
{
  if (patch == 0 || image.rows % patch != 0 || image.cols % patch != 0)
    throw ConfigError("image sides must be multiples of the patch size");
  std::size_t const pr = image.rows / patch;
  std::size_t const pc = image.cols / patch;
  Patches out;
  out.count = pr * pc;
  out.length = patch * patch * image.channels;
  out.values.reserve(out.count * out.length);
  for (std::size_t r = 0; r < pr; ++r)
    for (std::size_t c = 0; c < pc; ++c)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t ch = 0; ch < image.channels; ++ch)
            out.values.push_back(image.at(r * patch + y, c * patch + x, ch));
  return out;
}

Grid from_patches(Patches const & patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch)
{
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("image sides must be multiples of the patch size");
  std::size_t const pr = height / patch;
  std::size_t const pc = width / patch;
  if (patches.count != pr * pc || patches.length != patch * patch * channels ||
      patches.values.size() != patches.count * patches.length)
    throw ConfigError("patch set does not match the requested image shape");
  Grid img(height, width, channels);
  std::size_t i = 0;
  for (std::size_t r = 0; r < pr; ++r)
    for (std::size_t c = 0; c < pc; ++c)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t ch = 0; ch < channels; ++ch)
            img.at(r * patch + y, c * patch + x, ch) = patches.values[i++];
  return img;
}

EncodedSample encode(SkeletonSequence const & seq, SkeletonTopology const & topology, std::size_t height,
                     std::size_t width, std::size_t patch)
{
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("image sides must be multiples of the patch size");
  return {to_image(joints(seq), height, width), to_image(velocities(seq), height, width),
          to_image(bones(seq, topology), height, width), patch};
}

}  // namespace soar::encoding
