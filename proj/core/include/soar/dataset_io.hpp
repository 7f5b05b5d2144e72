#pragma once

#include "soar/skeleton.hpp"

#include <cstdint>
#include <filesystem>
#include <span>

namespace soar {

inline constexpr int kDatasetFormatVersion = 1;

// Writes `dir/meta.json` and `dir/samples.bin`. samples.bin is little-endian:
// magic "SOAR", u32 record count, then per record u32 label, camera_id,
// group_id, subject_id, T*J*B float32 coordinates, ceil(T*J/8) mask bytes
// (row-major, LSB first) and a u32 CRC32 of the preceding record bytes.
void save_dataset(Dataset const & dataset, std::filesystem::path const & dir);

// Throws FormatError (bad header/shape), ChecksumError (CRC mismatch or
// truncation) or ValidationError (mask/zero coupling broken).
Dataset load_dataset(std::filesystem::path const & dir);

// Standard CRC-32 (zlib polynomial).
std::uint32_t crc32(std::span<std::uint8_t const> bytes);

}  // namespace soar
