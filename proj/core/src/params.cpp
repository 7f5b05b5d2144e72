#include "soar/params.hpp"

#include "byte_io.hpp"
#include "soar/dataset_io.hpp"
#include "soar/errors.hpp"

#include <json.hpp>

namespace soar {

using nlohmann::json;

ParamStore::ParamStore(std::uint64_t seed, bool dry_run) : rng_(seed), dry_run_(dry_run) {}

ad::Tensor ParamStore::add(std::string name, ad::Shape shape, bool buffer, std::vector<double> values)
{
  for (auto const & e : entries_)
    if (e.name == name)
      throw ConfigError("duplicate parameter name '" + name + "'");
  ParamEntry entry{std::move(name), shape, {}, buffer};
  if (!dry_run_)
    entry.tensor = ad::Tensor::from(std::move(shape), std::move(values), !buffer);
  entries_.push_back(entry);
  return entries_.back().tensor;
}

ad::Tensor ParamStore::normal(std::string name, ad::Shape shape, double stddev)
{
  std::vector<double> values;
  if (!dry_run_)
  {
    values.resize(ad::numel(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto & v : values)
      v = dist(rng_);
  }
  return add(std::move(name), std::move(shape), false, std::move(values));
}

ad::Tensor ParamStore::constant(std::string name, ad::Shape shape, double value)
{
  std::vector<double> values;
  if (!dry_run_)
    values.assign(ad::numel(shape), value);
  return add(std::move(name), std::move(shape), false, std::move(values));
}

ad::Tensor ParamStore::buffer(std::string name, ad::Shape shape, double value)
{
  std::vector<double> values;
  if (!dry_run_)
    values.assign(ad::numel(shape), value);
  return add(std::move(name), std::move(shape), true, std::move(values));
}

void ParamStore::add_buffer(std::string name, ad::Tensor tensor)
{
  for (auto const & e : entries_)
    if (e.name == name)
      throw ConfigError("duplicate parameter name '" + name + "'");
  ad::Shape shape = tensor.defined() ? tensor.shape() : ad::Shape{};
  entries_.push_back({std::move(name), std::move(shape), dry_run_ ? ad::Tensor{} : std::move(tensor), true});
}

std::vector<ad::Tensor> ParamStore::trainable() const
{
  std::vector<ad::Tensor> out;
  for (auto const & e : entries_)
    if (!e.buffer && e.tensor.defined())
      out.push_back(e.tensor);
  return out;
}

std::size_t ParamStore::count(std::vector<std::string> const & prefixes) const
{
  std::size_t total = 0;
  for (auto const & e : entries_)
  {
    if (e.buffer)
      continue;
    bool match = prefixes.empty();
    for (auto const & p : prefixes)
      match = match || e.name.starts_with(p);
    if (match)
      total += ad::numel(e.shape);
  }
  return total;
}

void ParamStore::zero_grad()
{
  for (auto & e : entries_)
    if (e.tensor.defined())
      e.tensor.zero_grad();
}

void save_checkpoint(std::filesystem::path const & dir, ParamStore const & store, std::string const & extra_json)
{
  if (store.dry_run())
    throw StateError("cannot checkpoint a dry-run parameter store");
  json extra;
  try
  {
    extra = extra_json.empty() ? json::object() : json::parse(extra_json);
  }
  catch (json::exception const & e)
  {
    throw ConfigError(std::string("checkpoint extra metadata is not JSON: ") + e.what());
  }
  json params = json::array();
  std::vector<std::uint8_t> bytes;
  for (auto const & e : store.entries())
  {
    params.push_back({{"name", e.name}, {"shape", e.shape}, {"kind", e.buffer ? "buffer" : "param"}});
    for (double v : e.tensor.values())
      detail::put_f32(bytes, static_cast<float>(v));
  }
  detail::put_u32(bytes, crc32(std::span(bytes.data(), bytes.size())));

  std::filesystem::create_directories(dir);
  json meta{{"format_version", kCheckpointFormatVersion}, {"params", params}, {"extra", extra}};
  detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
  detail::write_file(dir / "params.bin", bytes);
}

namespace {

json read_meta(std::filesystem::path const & dir)
{
  try
  {
    json meta = json::parse(detail::read_text(dir / "meta.json"));
    if (meta.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw FormatError("unsupported checkpoint format version");
    return meta;
  }
  catch (json::exception const & e)
  {
    throw FormatError("malformed checkpoint meta.json: " + std::string(e.what()));
  }
}

}  // namespace

std::string read_checkpoint_extra(std::filesystem::path const & dir) { return read_meta(dir).at("extra").dump(); }

std::string load_checkpoint(std::filesystem::path const & dir, ParamStore & store)
{
  if (store.dry_run())
    throw StateError("cannot load values into a dry-run parameter store");
  json const meta = read_meta(dir);
  auto const & listed = meta.at("params");
  auto const & entries = store.entries();
  if (listed.size() != entries.size())
    throw FormatError("checkpoint has " + std::to_string(listed.size()) + " tensors, model expects " +
                      std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i)
  {
    if (listed[i].at("name").get<std::string>() != entries[i].name ||
        listed[i].at("shape").get<ad::Shape>() != entries[i].shape)
      throw FormatError("checkpoint tensor " + std::to_string(i) + " does not match '" + entries[i].name + "'");
  }

  auto const bytes = detail::read_file(dir / "params.bin");
  if (bytes.size() < 4)
    throw ChecksumError("params.bin is truncated");
  std::span<std::uint8_t const> const payload(bytes.data(), bytes.size() - 4);
  detail::ByteReader trailer(std::span<std::uint8_t const>(bytes).subspan(bytes.size() - 4));
  if (trailer.u32() != crc32(payload))
    throw ChecksumError("params.bin CRC mismatch");

  detail::ByteReader in(payload);
  for (auto const & e : entries)
  {
    auto values = ad::Tensor(e.tensor).mutable_values();
    for (auto & v : values)
      v = static_cast<double>(in.f32());
  }
  if (in.remaining() != 0)
    throw FormatError("params.bin has trailing bytes");
  return meta.at("extra").dump();
}

}  // namespace soar
