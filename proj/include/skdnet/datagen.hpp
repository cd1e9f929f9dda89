#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "skdnet/core.hpp"
#include "skdnet/io.hpp"

namespace skd::datagen {

enum class RegionShape { rect, ellipse };

/// Labeled area painted onto the scene. Later regions overwrite earlier ones.
/// rect: (row, col) top-left + (height, width); ellipse: (row, col) center +
/// (height, width) semi-axes.
struct Region {
  RegionShape shape = RegionShape::rect;
  int label = 0;
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  bool contains(int r, int c) const;
};

struct BandSpec {
  std::string tag;
  std::vector<HermitianCov3> centers;  // one per class
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 3;
  std::vector<std::string> class_names;
  std::vector<io::Rgb> palette;
  std::vector<Region> regions;
  std::vector<BandSpec> bands;
  int looks = 4;
  double impurity = 0.0;
  std::uint64_t seed = 1;

  /// Throws ValidationError on any violated invariant.
  void validate() const;
};

nlohmann::ordered_json to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

struct SyntheticScene {
  io::Scene scene;
  /// Class whose center generated each pixel (differs from the label on
  /// impure pixels; kUnlabeled outside every region).
  std::vector<std::uint8_t> source_class;
  /// Region index owning each pixel, -1 when uncovered.
  std::vector<int> region_of;
};

/// Every pixel of class m in band b is an independent multilook Wishart
/// draw around Sigma_{b,m}. Per region, round(impurity * area) pixels chosen
/// uniformly without replacement are drawn from a uniformly chosen other
/// class instead, at the same positions in every band. Pixels outside all
/// regions are unlabeled and drawn from the mean of the band's centers.
SyntheticScene generate_scene(const SceneSpec& spec);

/// Center built from a diagonal power profile with a complex HH/VV
/// correlation: C13 = rho * sqrt(C11 C33) * exp(i phase).
HermitianCov3 make_center(double c11, double c22, double c33, double rho13 = 0.0, double phase13 = 0.0);

/// Three-class, two-band scene where band 1 cannot tell classes {0,1} apart
/// (centers differ by a 5% scaling), band 2 cannot tell {1,2} apart, and the
/// remaining class is well separated in each band. Classes occupy identical
/// full-width stripes separated by unlabeled guard rows, so a window centered
/// in a stripe sees no other class.
inline constexpr int kComplementaryGuard = 6;
SceneSpec make_complementary_spec(int size = 64, double impurity = 0.1, std::uint64_t seed = 2024);

/// Generic multi-class scene with well-separated classes in both bands;
/// used for SDSR ablations with controlled impurity.
SceneSpec make_separable_spec(int size = 64, int num_classes = 3, double impurity = 0.2, std::uint64_t seed = 7);

}  // namespace skd::datagen
