#include "soar/dataset_io.hpp"

#include <zlib.h>

#include <algorithm>

namespace soar {

std::uint32_t crc32(std::span<std::uint8_t const> bytes)
{
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks so huge buffers stay correct.
  std::size_t offset = 0;
  while (offset < bytes.size())
  {
    std::size_t const chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace soar
