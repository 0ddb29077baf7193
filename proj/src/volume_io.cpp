#include "vqct/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace vqct {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; big-endian hosts need byte swapping");

namespace {

struct Header {
  Geometry geometry;
  std::string dtype;
  fs::path data_path;
};

Header read_header(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open volume header " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + path.string() + ": " + e.what());
  }
  Header h;
  try {
    const auto d = j.at("dims").get<std::vector<int>>();
    const auto s = j.at("spacing_mm").get<std::vector<double>>();
    const auto o = j.at("origin_mm").get<std::vector<double>>();
    if (d.size() != 3 || s.size() != 3 || o.size() != 3) {
      throw Error("volume header arrays must have 3 entries: " + path.string());
    }
    for (double v : s) {
      if (!(v > 0.0)) throw Error("non-positive spacing in " + path.string());
    }
    h.geometry = Geometry(Index3(d[0], d[1], d[2]), Eigen::Array3d(s[0], s[1], s[2]),
                          Vec3(o[0], o[1], o[2]));
    h.dtype = j.at("dtype").get<std::string>();
    h.data_path = path.parent_path() / j.at("data_file").get<std::string>();
  } catch (const json::exception& e) {
    throw Error("invalid volume header " + path.string() + ": " + e.what());
  }
  if (h.dtype != "f32" && h.dtype != "u8") {
    throw Error("unsupported dtype '" + h.dtype + "' in " + path.string());
  }
  return h;
}

std::vector<char> read_payload(const Header& h, std::size_t bytes_per_voxel) {
  std::ifstream in(h.data_path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open volume payload " + h.data_path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = h.geometry.size() * bytes_per_voxel;
  if (size != expected) {
    throw Error("payload size mismatch for " + h.data_path.string() + ": " +
                std::to_string(size) + " bytes, expected " + std::to_string(expected));
  }
  std::vector<char> buf(size);
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(size));
  if (!in) throw Error("short read on " + h.data_path.string());
  return buf;
}

void write_files(const fs::path& header, const Geometry& g, const char* dtype,
                 const char* bytes, std::size_t nbytes) {
  fs::path data = header;
  data.replace_extension(".vqr");
  if (!header.parent_path().empty()) fs::create_directories(header.parent_path());
  json j;
  j["dims"] = {g.dims.x(), g.dims.y(), g.dims.z()};
  j["spacing_mm"] = {g.spacing.x(), g.spacing.y(), g.spacing.z()};
  j["origin_mm"] = {g.origin.x(), g.origin.y(), g.origin.z()};
  j["dtype"] = dtype;
  j["data_file"] = data.filename().string();
  {
    std::ofstream out(header);
    if (!out) throw Error("cannot write " + header.string());
    out << j.dump(2) << '\n';
  }
  std::ofstream out(data, std::ios::binary);
  if (!out) throw Error("cannot write " + data.string());
  out.write(bytes, static_cast<std::streamsize>(nbytes));
}

}  // namespace

Geometry read_header_geometry(const fs::path& header, std::string* dtype) {
  Header h = read_header(header);
  if (dtype) *dtype = h.dtype;
  return h.geometry;
}

Volume load_volume(const fs::path& header) {
  const Header h = read_header(header);
  if (h.dtype == "u8") {
    const auto buf = read_payload(h, 1);
    std::vector<float> v(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) v[i] = static_cast<unsigned char>(buf[i]);
    return Volume(h.geometry, std::move(v));
  }
  const auto buf = read_payload(h, sizeof(float));
  std::vector<float> v(h.geometry.size());
  std::memcpy(v.data(), buf.data(), buf.size());
  return Volume(h.geometry, std::move(v));
}

Mask load_mask(const fs::path& header) {
  const Header h = read_header(header);
  if (h.dtype != "u8") throw Error("mask file must have dtype u8: " + header.string());
  const auto buf = read_payload(h, 1);
  std::vector<std::uint8_t> v(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const auto b = static_cast<std::uint8_t>(buf[i]);
    if (b > 1) throw Error("mask values must be 0 or 1: " + header.string());
    v[i] = b;
  }
  return Mask(h.geometry, std::move(v));
}

void write_volume(const fs::path& header, const Volume& vol) {
  const auto vals = vol.values();
  write_files(header, vol.geometry(), "f32", reinterpret_cast<const char*>(vals.data()),
              vals.size_bytes());
}

void write_mask(const fs::path& header, const Mask& mask) {
  std::vector<std::uint8_t> v(mask.values().begin(), mask.values().end());
  for (auto& b : v) b = b ? 1 : 0;
  write_files(header, mask.geometry(), "u8", reinterpret_cast<const char*>(v.data()), v.size());
}

}  // namespace vqct
