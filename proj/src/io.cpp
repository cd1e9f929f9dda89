#include "skdnet/io.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "skdnet/errors.hpp"

namespace skd::io {

namespace {

static_assert(std::endian::native == std::endian::little, "PCV1/SKD1 I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, in.data() + offset, 4);
  return v;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(fmt::format("short write to '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

void write_pcv1(const fs::path& path, const PolsarRaster& raster) {
  raster.validate();
  std::string out = "PCV1";
  put_u32(out, static_cast<std::uint32_t>(raster.height));
  put_u32(out, static_cast<std::uint32_t>(raster.width));
  put_u32(out, kFeatureDim);
  const auto* bytes = reinterpret_cast<const char*>(raster.features.data());
  out.append(bytes, raster.features.size() * sizeof(float));
  write_file_atomic(path, out);
}

PolsarRaster read_pcv1(const fs::path& path) {
  const std::string in = read_file(path);
  const std::string name = path.string();
  if (in.size() < 16)
    throw FormatError(fmt::format("{}: header truncated: expected 16 bytes, file has {}", name, in.size()));
  if (in.compare(0, 4, "PCV1") != 0) throw FormatError(fmt::format("{}: bad magic at byte 0 (expected \"PCV1\")", name));
  const std::uint32_t h = get_u32(in, 4), w = get_u32(in, 8), c = get_u32(in, 12);
  if (c != kFeatureDim) throw FormatError(fmt::format("{}: channel count {} at byte 12, expected 9", name, c));
  if (h == 0 || w == 0) throw FormatError(fmt::format("{}: zero dimension {}x{} at byte 4", name, h, w));
  const std::size_t payload = static_cast<std::size_t>(h) * w * c * sizeof(float);
  if (in.size() != 16 + payload)
    throw FormatError(fmt::format("{}: expected {} bytes ({}x{}x9 float32 + 16 byte header), file has {} (mismatch at byte {})",
                                  name, 16 + payload, h, w, in.size(), std::min(in.size(), 16 + payload)));
  PolsarRaster r(static_cast<int>(h), static_cast<int>(w));
  std::memcpy(r.features.data(), in.data() + 16, payload);
  return r;
}

void write_pgm(const fs::path& path, const LabelImage& image) {
  if (image.values.size() != static_cast<std::size_t>(image.height) * image.width)
    throw ValidationError("label image size does not match its dimensions");
  std::string out = fmt::format("P5\n{} {}\n255\n", image.width, image.height);
  out.append(reinterpret_cast<const char*>(image.values.data()), image.values.size());
  write_file_atomic(path, out);
}

NetpbmHeader parse_netpbm_header(const std::string& in, char kind, const std::string& name) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < in.size()) {
      if (std::isspace(static_cast<unsigned char>(in[pos]))) {
        ++pos;
      } else if (in[pos] == '#') {
        while (pos < in.size() && in[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_int = [&]() {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < in.size() && std::isdigit(static_cast<unsigned char>(in[pos])) && v < 1'000'000'000)
      v = v * 10 + (in[pos++] - '0');
    if (pos == start) throw FormatError(fmt::format("{}: expected integer at byte {}", name, start));
    return v;
  };
  if (in.size() < 2 || in[0] != 'P' || in[1] != kind)
    throw FormatError(fmt::format("{}: bad magic at byte 0 (expected \"P{}\")", name, kind));
  pos = 2;
  NetpbmHeader h;
  h.width = static_cast<int>(read_int());
  h.height = static_cast<int>(read_int());
  const long maxval = read_int();
  if (maxval != 255) throw FormatError(fmt::format("{}: maxval {} unsupported (expected 255)", name, maxval));
  h.data_offset = pos + 1;  // single whitespace before raster
  const std::size_t channels = kind == '6' ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height) * channels;
  if (in.size() < h.data_offset || in.size() - h.data_offset != need)
    throw FormatError(fmt::format("{}: expected {} raster bytes starting at byte {}, found {}", name, need, h.data_offset,
                                  in.size() > h.data_offset ? in.size() - h.data_offset : 0));
  return h;
}

LabelImage read_pgm(const fs::path& path) {
  const std::string in = read_file(path);
  const NetpbmHeader h = parse_netpbm_header(in, '5', path.string());
  LabelImage img;
  img.width = h.width;
  img.height = h.height;
  img.values.assign(in.begin() + static_cast<std::ptrdiff_t>(h.data_offset), in.end());
  return img;
}

// ---------------------------------------------------------------------------

SceneManifest write_scene(const fs::path& dir, const Scene& scene) {
  fs::create_directories(dir);
  SceneManifest m = scene.manifest;
  m.height = scene.bands.front().height;
  m.width = scene.bands.front().width;
  m.band_files.clear();
  m.band_tags.clear();
  for (std::size_t b = 0; b < scene.bands.size(); ++b) {
    m.band_files.push_back(fmt::format("band{}.pcv", b + 1));
    m.band_tags.push_back(scene.bands[b].band_tag);
    write_pcv1(dir / m.band_files.back(), scene.bands[b]);
  }
  m.label_file = "labels.pgm";
  write_pgm(dir / m.label_file, LabelImage{m.height, m.width, scene.labels()});

  nlohmann::ordered_json j;
  j["format"] = "skdnet-scene-v1";
  j["height"] = m.height;
  j["width"] = m.width;
  j["bands"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < m.band_files.size(); ++b)
    j["bands"].push_back({{"tag", m.band_tags[b]}, {"file", m.band_files[b]}});
  j["labels"] = m.label_file;
  j["classes"] = m.class_names;
  j["palette"] = m.palette;
  write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

Scene read_scene(const fs::path& manifest_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("{}: invalid JSON: {}", manifest_path.string(), e.what()));
  }
  Scene scene;
  SceneManifest& m = scene.manifest;
  try {
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    for (const auto& b : j.at("bands")) {
      m.band_tags.push_back(b.at("tag").get<std::string>());
      m.band_files.push_back(b.at("file").get<std::string>());
    }
    m.label_file = j.at("labels").get<std::string>();
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.palette = j.at("palette").get<std::vector<Rgb>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: malformed manifest: {}", manifest_path.string(), e.what()));
  }
  if (m.band_files.empty()) throw FormatError("manifest lists no bands");
  if (m.class_names.empty()) throw FormatError("manifest lists no classes");
  if (m.palette.size() < m.class_names.size()) throw ValidationError("manifest palette is shorter than the class list");

  const fs::path dir = manifest_path.parent_path();
  const LabelImage labels = read_pgm(dir / m.label_file);
  if (labels.height != m.height || labels.width != m.width)
    throw ValidationError(fmt::format("label raster is {}x{} but manifest declares {}x{}", labels.height, labels.width,
                                      m.height, m.width));
  for (std::size_t b = 0; b < m.band_files.size(); ++b) {
    PolsarRaster r = read_pcv1(dir / m.band_files[b]);
    if (r.height != m.height || r.width != m.width)
      throw ValidationError(fmt::format("band '{}' is {}x{} but manifest declares {}x{}", m.band_files[b], r.height,
                                        r.width, m.height, m.width));
    r.band_tag = m.band_tags[b];
    r.labels = labels.values;
    r.validate(m.num_classes());
    scene.bands.push_back(std::move(r));
  }
  return scene;
}

}  // namespace skd::io
