#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skdnet/core.hpp"

namespace skd::io {

namespace fs = std::filesystem;

/// PCV1 container: "PCV1", u32 height, u32 width, u32 channels (= 9), then
/// height*width*9 little-endian float32 values, row-major channel-last.
void write_pcv1(const fs::path& path, const PolsarRaster& raster);
PolsarRaster read_pcv1(const fs::path& path);

/// 8-bit binary PGM (P5), maxval 255.
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};
void write_pgm(const fs::path& path, const LabelImage& image);
LabelImage read_pgm(const fs::path& path);

struct NetpbmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

/// Parses a binary netpbm header ('5' = P5 gray, '6' = P6 color) with
/// maxval 255 and checks the raster length.
NetpbmHeader parse_netpbm_header(const std::string& bytes, char kind, const std::string& name);

using Rgb = std::array<std::uint8_t, 3>;

/// JSON manifest tying band files, label file, class names and palette together.
/// File paths are stored relative to the manifest directory.
struct SceneManifest {
  int height = 0;
  int width = 0;
  std::vector<std::string> band_tags;
  std::vector<std::string> band_files;
  std::string label_file;
  std::vector<std::string> class_names;
  std::vector<Rgb> palette;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

/// In-memory scene: co-registered bands sharing one label raster (each band
/// raster carries a copy of the labels).
struct Scene {
  SceneManifest manifest;
  std::vector<PolsarRaster> bands;

  const std::vector<std::uint8_t>& labels() const { return *bands.front().labels; }
  int num_classes() const { return manifest.num_classes(); }
};

/// Writes `band{i}.pcv`, `labels.pgm` and `manifest.json` into `dir` and
/// returns the manifest as written.
SceneManifest write_scene(const fs::path& dir, const Scene& scene);
/// Reads a manifest and everything it references; validates that every
/// file agrees on dimensions and labels are < class count (or 255).
Scene read_scene(const fs::path& manifest_path);

/// Whole-file write through a sibling temp file and rename.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

}  // namespace skd::io
