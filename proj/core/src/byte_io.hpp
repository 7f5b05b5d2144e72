#pragma once

#include "soar/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace soar::detail {

inline void put_u32(std::vector<std::uint8_t> & out, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t> & out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
public:
  explicit ByteReader(std::span<std::uint8_t const> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::uint32_t u32()
  {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::span<std::uint8_t const> take(std::size_t n)
  {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

private:
  void need(std::size_t n) const
  {
    if (remaining() < n)
      throw ChecksumError("unexpected end of data (truncated file?)");
  }

  std::span<std::uint8_t const> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace soar::detail

#include <filesystem>
#include <fstream>
#include <iterator>

namespace soar::detail {

inline std::vector<std::uint8_t> read_file(std::filesystem::path const & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(std::filesystem::path const & path, std::span<std::uint8_t const> bytes)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<char const *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw ConfigError("write failed for " + path.string());
}

inline void write_text(std::filesystem::path const & path, std::string const & text)
{
  write_file(path, {reinterpret_cast<std::uint8_t const *>(text.data()), text.size()});
}

inline std::string read_text(std::filesystem::path const & path)
{
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace soar::detail
