#include "reseg/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace reseg {

namespace {

using nlohmann::json;

std::string header_path(const std::string& vol_path) {
  auto dot = vol_path.rfind('.');
  if (dot == std::string::npos || vol_path.substr(dot) != ".vol")
    throw Error("volume path must end in .vol: " + vol_path);
  return vol_path.substr(0, dot) + ".json";
}

void write_payload(const std::string& vol_path, const std::vector<float>& payload) {
  std::ofstream out(vol_path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + vol_path);
  // Payload is little-endian float32 regardless of host order.
  std::vector<unsigned char> bytes(payload.size() * 4);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(payload[i]);
    bytes[4 * i + 0] = static_cast<unsigned char>(u & 0xff);
    bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write: " + vol_path);
}

std::vector<float> read_payload(const std::string& vol_path, std::size_t expected) {
  std::ifstream in(vol_path, std::ios::binary);
  if (!in) throw Error("cannot open: " + vol_path);
  std::vector<unsigned char> bytes(expected * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw Error("payload shorter than header shape: " + vol_path);
  in.peek();
  if (!in.eof()) throw Error("payload longer than header shape: " + vol_path);
  std::vector<float> payload(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i + 0]) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    payload[i] = std::bit_cast<float>(u);
  }
  return payload;
}

void write_header(const std::string& vol_path, const GridGeometry& geo, const std::string& kind,
                  const std::map<std::int32_t, std::string>* labels) {
  json j;
  j["shape"] = {geo.shape[0], geo.shape[1], geo.shape[2]};
  j["spacing_mm"] = {geo.spacing[0], geo.spacing[1], geo.spacing[2]};
  j["kind"] = kind;
  if (labels) {
    json lj = json::object();
    for (const auto& [code, name] : *labels) lj[std::to_string(code)] = name;
    j["labels"] = lj;
  }
  std::ofstream out(header_path(vol_path));
  if (!out) throw Error("cannot open for writing: " + header_path(vol_path));
  out << j.dump(2) << '\n';
}

struct Header {
  GridGeometry geo;
  std::string kind;
  std::map<std::int32_t, std::string> labels;
};

Header read_header(const std::string& vol_path) {
  const std::string hpath = header_path(vol_path);
  std::ifstream in(hpath);
  if (!in) throw Error("missing volume header: " + hpath);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + hpath + ": " + e.what());
  }
  Header h;
  try {
    auto shp = j.at("shape");
    auto spc = j.at("spacing_mm");
    if (shp.size() != 3 || spc.size() != 3)
      throw Error("volume header shape/spacing must have 3 entries: " + hpath);
    for (int a = 0; a < 3; ++a) {
      h.geo.shape[a] = shp[a].get<int>();
      h.geo.spacing[a] = spc[a].get<double>();
    }
    h.kind = j.at("kind").get<std::string>();
    if (h.kind != "scalar" && h.kind != "labels")
      throw Error("volume header kind must be scalar or labels: " + hpath);
    if (j.contains("labels")) {
      for (auto it = j["labels"].begin(); it != j["labels"].end(); ++it)
        h.labels[std::stoi(it.key())] = it.value().get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + hpath + ": " + e.what());
  }
  h.geo.validate();
  return h;
}

}  // namespace

void write_volume(const std::string& vol_path, const VolumeGrid& v) {
  v.ensure_finite(vol_path);
  std::vector<float> payload(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) payload[i] = static_cast<float>(v[i]);
  write_payload(vol_path, payload);
  write_header(vol_path, v.geometry(), "scalar", nullptr);
}

void write_volume(const std::string& vol_path, const LabelVolume& v) {
  v.validate_codes();
  std::vector<float> payload(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) payload[i] = static_cast<float>(v[i]);
  write_payload(vol_path, payload);
  write_header(vol_path, v.geometry(), "labels", &v.names());
}

void write_volume(const std::string& vol_path, const BinaryMask& m) {
  LabelVolume lv(m.shape(), m.spacing(), {{1, "mask"}});
  for (std::size_t i = 0; i < m.size(); ++i) lv[i] = m.test(i) ? 1 : 0;
  write_volume(vol_path, lv);
}

VolumeGrid read_scalar_volume(const std::string& vol_path) {
  const Header h = read_header(vol_path);
  if (h.kind != "scalar") throw Error("expected scalar volume: " + vol_path);
  const auto payload = read_payload(vol_path, h.geo.voxels());
  std::vector<double> data(payload.begin(), payload.end());
  VolumeGrid v(h.geo, std::move(data));
  v.ensure_finite(vol_path);
  return v;
}

LabelVolume read_label_volume(const std::string& vol_path) {
  const Header h = read_header(vol_path);
  if (h.kind != "labels") throw Error("expected label volume: " + vol_path);
  const auto payload = read_payload(vol_path, h.geo.voxels());
  LabelVolume v(h.geo.shape, h.geo.spacing, h.labels);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    const float f = payload[i];
    const auto code = static_cast<std::int32_t>(f);
    if (!std::isfinite(f) || static_cast<float>(code) != f)
      throw Error("non-integer label value in " + vol_path);
    v[i] = code;
  }
  v.validate_codes();
  return v;
}

BinaryMask read_mask_volume(const std::string& vol_path) {
  const LabelVolume lv = read_label_volume(vol_path);
  BinaryMask m(lv.shape(), lv.spacing());
  for (std::size_t i = 0; i < lv.size(); ++i) m.set(i, lv[i] != 0);
  return m;
}

std::variant<VolumeGrid, LabelVolume> read_volume(const std::string& vol_path) {
  const Header h = read_header(vol_path);
  if (h.kind == "scalar") return read_scalar_volume(vol_path);
  return read_label_volume(vol_path);
}

}  // namespace reseg
