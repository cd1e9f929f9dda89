#include "skdnet/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/rng.hpp"
#include "skdnet/wishart.hpp"

namespace skd::datagen {

namespace {

// Stream tags for split_seed.
constexpr std::uint64_t kImpurityStream = 0x1001;
constexpr std::uint64_t kBandStream = 0x2000;

const std::vector<io::Rgb> kDefaultPalette = {
    {{230, 25, 75}}, {{60, 180, 75}}, {{0, 130, 200}}, {{255, 225, 25}},
    {{245, 130, 48}}, {{145, 30, 180}}, {{70, 240, 240}}, {{240, 50, 230}},
};

// Full-width horizontal stripes of near-equal height, one per class.
std::vector<Region> stripes(int size, int num_classes) {
  std::vector<Region> regions;
  int row = 0;
  for (int m = 0; m < num_classes; ++m) {
    const int h = size / num_classes + (m < size % num_classes ? 1 : 0);
    regions.push_back({RegionShape::rect, m, row, 0, h, size});
    row += h;
  }
  return regions;
}

// Full-width horizontal stripes, one per class, separated from each other
// and from the top/bottom edges by `guard` unlabeled rows.
std::vector<Region> guarded_stripes(int size, int num_classes, int guard) {
  const int labeled = size - (num_classes + 1) * guard;
  if (labeled < num_classes)
    throw ConfigError(fmt::format("scene size {} too small for {} guarded stripes", size, num_classes));
  std::vector<Region> regions;
  int row = guard;
  for (int m = 0; m < num_classes; ++m) {
    const int h = labeled / num_classes + (m == num_classes / 2 ? labeled % num_classes : 0);
    regions.push_back({RegionShape::rect, m, row, 0, h, size});
    row += h + guard;
  }
  return regions;
}

void fill_names(SceneSpec& spec) {
  spec.class_names.clear();
  spec.palette.clear();
  for (int m = 0; m < spec.num_classes; ++m) {
    spec.class_names.push_back(fmt::format("class{}", m));
    spec.palette.push_back(kDefaultPalette[static_cast<std::size_t>(m) % kDefaultPalette.size()]);
  }
}

HermitianCov3 scaled(const HermitianCov3& c, double a) { return HermitianCov3::from_matrix(c.matrix() * a); }

}  // namespace

bool Region::contains(int r, int c) const {
  if (shape == RegionShape::rect) return r >= row && r < row + height && c >= col && c < col + width;
  const double dr = (r - row) / static_cast<double>(height);
  const double dc = (c - col) / static_cast<double>(width);
  return dr * dr + dc * dc <= 1.0;
}

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError(fmt::format("scene size {}x{} is invalid", height, width));
  if (num_classes < 1 || num_classes > 254) throw ValidationError(fmt::format("num_classes {} out of range", num_classes));
  if (static_cast<int>(class_names.size()) != num_classes)
    throw ValidationError("class_names must have one entry per class");
  if (static_cast<int>(palette.size()) < num_classes) throw ValidationError("palette needs one color per class");
  if (looks < 3) throw ValidationError(fmt::format("looks must be >= 3 for full-rank draws, got {}", looks));
  if (!(impurity >= 0.0 && impurity < 0.5)) throw ValidationError(fmt::format("impurity {} not in [0, 0.5)", impurity));
  if (num_classes < 2 && impurity > 0.0) throw ValidationError("impurity needs at least two classes");
  if (bands.empty()) throw ValidationError("scene spec has no bands");
  for (const auto& b : bands) {
    if (static_cast<int>(b.centers.size()) != num_classes)
      throw ValidationError(fmt::format("band '{}' has {} centers for {} classes", b.tag, b.centers.size(), num_classes));
    for (const auto& c : b.centers) wishart::CenterFactor check(c);  // throws if not PD
  }
  std::vector<bool> used(static_cast<std::size_t>(num_classes), false);
  for (const auto& r : regions) {
    if (r.label < 0 || r.label >= num_classes) throw ValidationError(fmt::format("region label {} out of range", r.label));
    if (r.height <= 0 || r.width <= 0) throw ValidationError("region has non-positive extent");
    if (r.shape == RegionShape::rect) {
      if (r.row < 0 || r.col < 0 || r.row + r.height > height || r.col + r.width > width)
        throw ValidationError(fmt::format("rect region at ({},{}) size {}x{} exceeds the scene", r.row, r.col, r.height, r.width));
    } else if (r.row < 0 || r.row >= height || r.col < 0 || r.col >= width) {
      throw ValidationError(fmt::format("ellipse center ({},{}) outside the scene", r.row, r.col));
    }
    used[static_cast<std::size_t>(r.label)] = true;
  }
  for (int m = 0; m < num_classes; ++m)
    if (!used[static_cast<std::size_t>(m)]) throw ValidationError(fmt::format("class {} is not used by any region", m));
}

nlohmann::ordered_json to_json(const SceneSpec& spec) {
  nlohmann::ordered_json j;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["num_classes"] = spec.num_classes;
  j["class_names"] = spec.class_names;
  j["palette"] = spec.palette;
  j["looks"] = spec.looks;
  j["impurity"] = spec.impurity;
  j["seed"] = spec.seed;
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& r : spec.regions)
    j["regions"].push_back({{"shape", r.shape == RegionShape::rect ? "rect" : "ellipse"},
                            {"class", r.label},
                            {"row", r.row},
                            {"col", r.col},
                            {"height", r.height},
                            {"width", r.width}});
  j["bands"] = nlohmann::ordered_json::array();
  for (const auto& b : spec.bands) {
    nlohmann::ordered_json centers = nlohmann::ordered_json::array();
    for (const auto& c : b.centers) centers.push_back(vectorize_covariance(c));
    j["bands"].push_back({{"tag", b.tag}, {"centers", centers}});
  }
  return j;
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.looks = j.value("looks", 4);
    s.impurity = j.value("impurity", 0.0);
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("class_names")) {
      s.class_names = j.at("class_names").get<std::vector<std::string>>();
      s.palette = j.at("palette").get<std::vector<io::Rgb>>();
    } else {
      fill_names(s);
    }
    for (const auto& r : j.at("regions")) {
      Region reg;
      const auto shape = r.value("shape", std::string("rect"));
      if (shape == "rect") {
        reg.shape = RegionShape::rect;
      } else if (shape == "ellipse") {
        reg.shape = RegionShape::ellipse;
      } else {
        throw ValidationError(fmt::format("unknown region shape '{}'", shape));
      }
      reg.label = r.at("class").get<int>();
      reg.row = r.at("row").get<int>();
      reg.col = r.at("col").get<int>();
      reg.height = r.at("height").get<int>();
      reg.width = r.at("width").get<int>();
      s.regions.push_back(reg);
    }
    for (const auto& b : j.at("bands")) {
      BandSpec band;
      band.tag = b.at("tag").get<std::string>();
      for (const auto& c : b.at("centers")) {
        const auto v = c.get<std::array<double, kFeatureDim>>();
        band.centers.push_back(HermitianCov3::from_matrix(devectorize(std::span<const double, kFeatureDim>(v)).matrix()));
      }
      s.bands.push_back(std::move(band));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed scene spec: {}", e.what()));
  }
  s.validate();
  return s;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;

  SyntheticScene out;
  out.region_of.assign(n, -1);
  for (std::size_t ri = 0; ri < spec.regions.size(); ++ri)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (spec.regions[ri].contains(r, c)) out.region_of[static_cast<std::size_t>(r) * w + c] = static_cast<int>(ri);

  std::vector<std::uint8_t> labels(n, kUnlabeled);
  for (std::size_t i = 0; i < n; ++i)
    if (out.region_of[i] >= 0) labels[i] = static_cast<std::uint8_t>(spec.regions[static_cast<std::size_t>(out.region_of[i])].label);
  out.source_class = labels;

  // Impure positions: per region, a uniform subset of fixed size.
  CounterRng impurity_rng(split_seed(spec.seed, kImpurityStream));
  for (std::size_t ri = 0; ri < spec.regions.size(); ++ri) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (out.region_of[i] == static_cast<int>(ri)) members.push_back(i);
    const auto count = static_cast<std::size_t>(std::llround(spec.impurity * static_cast<double>(members.size())));
    const int label = spec.regions[ri].label;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + impurity_rng.below(members.size() - k);
      std::swap(members[k], members[j]);
      auto other = static_cast<int>(impurity_rng.below(static_cast<std::uint64_t>(spec.num_classes - 1)));
      if (other >= label) ++other;
      out.source_class[members[k]] = static_cast<std::uint8_t>(other);
    }
  }

  out.scene.manifest.height = h;
  out.scene.manifest.width = w;
  out.scene.manifest.class_names = spec.class_names;
  out.scene.manifest.palette = spec.palette;
  for (const auto& b : spec.bands) out.scene.manifest.band_tags.push_back(b.tag);
  for (std::size_t b = 0; b < spec.bands.size(); ++b) {
    const BandSpec& band = spec.bands[b];
    std::vector<wishart::CenterFactor> factors;
    for (const auto& c : band.centers) factors.emplace_back(c);
    Matrix3c mean = Matrix3c::Zero();
    for (const auto& c : band.centers) mean += c.matrix();
    const wishart::CenterFactor background(HermitianCov3::from_matrix(mean / static_cast<double>(band.centers.size())));

    PolsarRaster raster(h, w, band.tag);
    raster.labels = labels;
    const CounterRng band_rng(split_seed(spec.seed, kBandStream + b));
    for (int r = 0; r < h; ++r) {
      CounterRng row_rng = band_rng.substream(static_cast<std::uint64_t>(r));
      for (int c = 0; c < w; ++c) {
        const auto src = out.source_class[static_cast<std::size_t>(r) * w + c];
        const auto& factor = src == kUnlabeled ? background : factors[src];
        const Feature9 v = vectorize_covariance(wishart::sample_wishart(factor, spec.looks, row_rng));
        auto px = raster.pixel(r, c);
        for (int k = 0; k < kFeatureDim; ++k) px[k] = static_cast<float>(v[k]);
      }
    }
    out.scene.bands.push_back(std::move(raster));
  }
  return out;
}

HermitianCov3 make_center(double c11, double c22, double c33, double rho13, double phase13) {
  Matrix3c m = Matrix3c::Zero();
  m(0, 0) = c11;
  m(1, 1) = c22;
  m(2, 2) = c33;
  m(0, 2) = std::polar(rho13 * std::sqrt(c11 * c33), phase13);
  m(2, 0) = std::conj(m(0, 2));
  return HermitianCov3::from_matrix(m);
}

SceneSpec make_complementary_spec(int size, double impurity, std::uint64_t seed) {
  SceneSpec spec;
  spec.height = size;
  spec.width = size;
  spec.num_classes = 3;
  spec.looks = 4;
  spec.impurity = impurity;
  spec.seed = seed;
  fill_names(spec);
  spec.regions = guarded_stripes(size, 3, kComplementaryGuard);

  // Band 1: classes 0/1 differ only by a 5% power scaling, class 2 has a
  // different scattering profile.
  const HermitianCov3 a = make_center(1.0, 0.25, 0.8, 0.5, 0.3);
  const HermitianCov3 b = make_center(0.3, 0.9, 0.25, 0.1, 1.5);
  spec.bands.push_back({"band1", {a, scaled(a, 1.05), b}});
  // Band 2: classes 1/2 collapse, class 0 stands apart.
  const HermitianCov3 c = make_center(0.25, 0.7, 0.35, 0.05, -1.0);
  const HermitianCov3 d = make_center(0.9, 0.2, 1.1, 0.6, 0.0);
  spec.bands.push_back({"band2", {c, d, scaled(d, 1.05)}});
  spec.validate();
  return spec;
}

SceneSpec make_separable_spec(int size, int num_classes, double impurity, std::uint64_t seed) {
  SceneSpec spec;
  spec.height = size;
  spec.width = size;
  spec.num_classes = num_classes;
  spec.looks = 4;
  spec.impurity = impurity;
  spec.seed = seed;
  fill_names(spec);
  spec.regions = stripes(size, num_classes);

  // Rotating power profiles; each class peaks in a different channel.
  const std::array<std::array<double, 3>, 4> profiles = {{{1.0, 0.2, 0.6}, {0.3, 0.9, 0.3}, {0.5, 0.25, 1.2}, {0.8, 0.6, 0.8}}};
  for (int b = 0; b < 2; ++b) {
    BandSpec band;
    band.tag = fmt::format("band{}", b + 1);
    for (int m = 0; m < num_classes; ++m) {
      const auto& p = profiles[static_cast<std::size_t>(m) % profiles.size()];
      const double gain = 1.0 + 0.5 * (m / static_cast<int>(profiles.size())) + 0.1 * b;
      band.centers.push_back(make_center(gain * p[0], gain * p[1], gain * p[2], 0.3 + 0.1 * b, 0.5 * m));
    }
    spec.bands.push_back(std::move(band));
  }
  spec.validate();
  return spec;
}

}  // namespace skd::datagen
