#include "soar/dataset_io.hpp"

#include "byte_io.hpp"
#include "soar/errors.hpp"

#include <json.hpp>

namespace soar {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'O', 'A', 'R'};

json meta_of(Dataset const & ds)
{
  json bones = json::array();
  for (auto const & [a, b] : ds.topology.bones)
    bones.push_back({a, b});
  json poses = json::array();
  for (auto const & p : ds.camera_poses)
    poses.push_back(p.m);
  return {
    {"format_version", kDatasetFormatVersion},
    {"T", ds.frames},
    {"J", ds.joints},
    {"B", ds.dims},
    {"topology", {{"joint_count", ds.topology.joint_count}, {"bones", bones}}},
    {"class_names", ds.class_names},
    {"camera_count", ds.camera_count},
    {"camera_poses", poses},
    {"sample_count", ds.samples.size()},
  };
}

void parse_meta(json const & meta, Dataset & ds)
{
  try
  {
    if (meta.at("format_version").get<int>() != kDatasetFormatVersion)
      throw FormatError("unsupported dataset format version");
    ds.frames = meta.at("T").get<std::size_t>();
    ds.joints = meta.at("J").get<std::size_t>();
    ds.dims = meta.at("B").get<std::size_t>();
    ds.topology.joint_count = meta.at("topology").at("joint_count").get<std::size_t>();
    for (auto const & bone : meta.at("topology").at("bones"))
      ds.topology.bones.emplace_back(bone.at(0).get<std::size_t>(), bone.at(1).get<std::size_t>());
    ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    ds.camera_count = meta.at("camera_count").get<std::size_t>();
    if (meta.contains("camera_poses"))
      for (auto const & p : meta.at("camera_poses"))
      {
        Mat4 m;
        m.m = p.get<std::array<double, 16>>();
        ds.camera_poses.push_back(m);
      }
  }
  catch (json::exception const & e)
  {
    throw FormatError(std::string("malformed meta.json: ") + e.what());
  }
  if (ds.frames < 2 || ds.joints < 2 || (ds.dims != 2 && ds.dims != 3))
    throw FormatError("meta.json declares an invalid sample shape");
  try
  {
    ds.topology.validate();
  }
  catch (ConfigError const & e)
  {
    throw FormatError(std::string("meta.json topology: ") + e.what());
  }
}

}  // namespace

void save_dataset(Dataset const & ds, std::filesystem::path const & dir)
{
  ds.validate();
  std::filesystem::create_directories(dir);

  std::size_t const cells = ds.frames * ds.joints;
  std::size_t const mask_bytes = (cells + 7) / 8;
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.samples.size() * (20 + cells * ds.dims * 4 + mask_bytes));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));

  for (auto const & s : ds.samples)
  {
    std::size_t const start = out.size();
    detail::put_u32(out, s.info.label);
    detail::put_u32(out, s.info.camera_id);
    detail::put_u32(out, s.info.group_id);
    detail::put_u32(out, s.info.subject_id);
    for (float v : s.data())
      detail::put_f32(out, v);
    std::vector<std::uint8_t> bits(mask_bytes, 0);
    auto const mask = s.mask();
    for (std::size_t i = 0; i < cells; ++i)
      if (mask[i])
        bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.insert(out.end(), bits.begin(), bits.end());
    std::uint32_t const crc = crc32(std::span(out).subspan(start));
    detail::put_u32(out, crc);
  }

  detail::write_text(dir / "meta.json", meta_of(ds).dump(2) + "\n");
  detail::write_file(dir / "samples.bin", out);
}

Dataset load_dataset(std::filesystem::path const & dir)
{
  Dataset ds;
  json meta;
  try
  {
    meta = json::parse(detail::read_text(dir / "meta.json"));
  }
  catch (json::exception const & e)
  {
    throw FormatError(std::string("meta.json is not valid JSON: ") + e.what());
  }
  parse_meta(meta, ds);

  auto const bytes = detail::read_file(dir / "samples.bin");
  detail::ByteReader in(bytes);
  if (in.remaining() < 8)
    throw FormatError("samples.bin is too short for its header");
  auto const magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic)))
    throw FormatError("samples.bin has a bad magic number");
  std::uint32_t const count = in.u32();

  std::size_t const cells = ds.frames * ds.joints;
  std::size_t const values = cells * ds.dims;
  std::size_t const mask_bytes = (cells + 7) / 8;
  ds.samples.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r)
  {
    std::size_t const start = in.position();
    SampleInfo info;
    info.label = in.u32();
    info.camera_id = in.u32();
    info.group_id = in.u32();
    info.subject_id = in.u32();
    std::vector<float> data(values);
    for (auto & v : data)
      v = in.f32();
    auto const bits = in.take(mask_bytes);
    std::size_t const end = in.position();
    std::uint32_t const stored = in.u32();
    if (crc32(std::span(bytes).subspan(start, end - start)) != stored)
      throw ChecksumError("record " + std::to_string(r) + " failed its CRC32 check");

    std::vector<std::uint8_t> mask(cells, 0);
    for (std::size_t i = 0; i < cells; ++i)
      mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
    for (std::size_t i = cells; i < mask_bytes * 8; ++i)
      if ((bits[i / 8] >> (i % 8)) & 1u)
        throw FormatError("record " + std::to_string(r) + " sets padding bits in its mask");
    ds.samples.emplace_back(ds.frames, ds.joints, ds.dims, std::move(data), std::move(mask), info);
  }
  if (in.remaining() != 0)
    throw FormatError("samples.bin has trailing bytes after the last record");
  if (meta.contains("sample_count") && meta["sample_count"].get<std::size_t>() != ds.samples.size())
    throw FormatError("meta.json sample_count disagrees with samples.bin");
  ds.validate();
  return ds;
}

}  // namespace soar
