#pragma once

#include "soar/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace soar {

struct ParamEntry {
  std::string name;
  ad::Shape shape;
  ad::Tensor tensor;    // undefined in dry-run stores
  bool buffer = false;  // running statistics; saved but never optimised
};

// Owns every learned tensor of a model, in creation order. A dry-run store
// only records names and shapes, which is enough for parameter counting at
// full-size presets.
class ParamStore {
public:
  explicit ParamStore(std::uint64_t seed = 0, bool dry_run = false);

  bool dry_run() const { return dry_run_; }

  ad::Tensor normal(std::string name, ad::Shape shape, double stddev = 0.02);
  ad::Tensor constant(std::string name, ad::Shape shape, double value);
  // Registers an existing non-trainable tensor (e.g. running statistics).
  void add_buffer(std::string name, ad::Tensor tensor);
  ad::Tensor buffer(std::string name, ad::Shape shape, double value);

  std::vector<ParamEntry> const & entries() const { return entries_; }
  std::vector<ad::Tensor> trainable() const;

  // Learned scalars whose name starts with any of `prefixes` (all when empty).
  std::size_t count(std::vector<std::string> const & prefixes = {}) const;

  void zero_grad();

private:
  ad::Tensor add(std::string name, ad::Shape shape, bool buffer, std::vector<double> values);

  std::mt19937_64 rng_;
  bool dry_run_;
  std::vector<ParamEntry> entries_;
};

inline constexpr int kCheckpointFormatVersion = 1;

// `dir/meta.json` lists names, shapes and kinds plus `extra` (a JSON object
// serialised as text); `dir/params.bin` holds every value as little-endian
// float32 in entry order followed by a u32 CRC32 of those bytes.
void save_checkpoint(std::filesystem::path const & dir, ParamStore const & store, std::string const & extra_json);

// Loads values into a store with the same entries. Returns the `extra` JSON
// text. Throws FormatError on name/shape mismatch, ChecksumError on CRC
// failure.
std::string load_checkpoint(std::filesystem::path const & dir, ParamStore & store);
// Reads only the `extra` object.
std::string read_checkpoint_extra(std::filesystem::path const & dir);

}  // namespace soar
