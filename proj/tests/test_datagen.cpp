#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "skdnet/datagen.hpp"
#include "skdnet/errors.hpp"
#include "skdnet/io.hpp"

using namespace skd;
using namespace skd::datagen;
namespace fs = std::filesystem;

namespace {

SceneSpec single_class_spec() {
  SceneSpec s;
  s.height = s.width = 64;
  s.num_classes = 1;
  s.class_names = {"only"};
  s.palette = {io::Rgb{10, 20, 30}};
  s.regions = {{RegionShape::rect, 0, 0, 0, 64, 64}};
  s.bands = {{"band1", {make_center(1.0, 0.5, 2.0, 0.4, 0.7)}}};
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("single-class scene mean matches the center") {
  const SceneSpec spec = single_class_spec();
  const SyntheticScene scene = generate_scene(spec);
  const PolsarRaster& r = scene.scene.bands[0];
  Matrix3c mean = Matrix3c::Zero();
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) mean += devectorize(r.pixel(i, j)).matrix();
  mean /= 64.0 * 64.0;
  const Matrix3c& truth = spec.bands[0].centers[0].matrix();
  CHECK((mean - truth).norm() / truth.norm() < 0.02);
}

TEST_CASE("same seed gives bit-identical scenes; another seed does not") {
  const SceneSpec spec = make_complementary_spec();
  const SyntheticScene a = generate_scene(spec), b = generate_scene(spec);
  for (std::size_t k = 0; k < a.scene.bands.size(); ++k) CHECK(a.scene.bands[k].features == b.scene.bands[k].features);
  CHECK(a.source_class == b.source_class);
  SceneSpec other = spec;
  other.seed += 1;
  CHECK(generate_scene(other).scene.bands[0].features != a.scene.bands[0].features);
}

TEST_CASE("impurity fraction per region") {
  const SceneSpec spec = make_separable_spec(64, 3, 0.2, 11);
  const SyntheticScene s = generate_scene(spec);
  for (std::size_t ri = 0; ri < spec.regions.size(); ++ri) {
    long area = 0, impure = 0;
    for (std::size_t i = 0; i < s.region_of.size(); ++i) {
      if (s.region_of[i] != static_cast<int>(ri)) continue;
      ++area;
      impure += s.source_class[i] != s.scene.labels()[i];
      CHECK(s.source_class[i] < spec.num_classes);
    }
    CHECK(std::abs(double(impure) / area - 0.2) <= 0.02);
  }
}

TEST_CASE("impure pixels follow the other class in every band") {
  // With one impure class per pixel and well separated centers, the
  // nearest true center of an impure pixel is usually its source class in
  // both bands.
  const SceneSpec spec = make_separable_spec(48, 3, 0.3, 5);
  const SyntheticScene s = generate_scene(spec);
  long impure = 0, both = 0;
  for (std::size_t i = 0; i < s.source_class.size(); ++i) {
    const auto src = s.source_class[i];
    if (src == kUnlabeled || src == s.scene.labels()[i]) continue;
    ++impure;
    bool agree = true;
    for (int b = 0; b < 2; ++b) {
      const int W = spec.width;
      const HermitianCov3 px = devectorize(s.scene.bands[b].pixel(static_cast<int>(i) / W, static_cast<int>(i) % W));
      int best = 0;
      double bd = 1e300;
      for (int m = 0; m < 3; ++m) {
        const double d = oracle::dense_distance(px.matrix(), spec.bands[b].centers[m].matrix());
        if (d < bd) bd = d, best = m;
      }
      agree = agree && best == src;
    }
    both += agree;
  }
  REQUIRE(impure > 0);
  CHECK(double(both) / impure > 0.6);
}

TEST_CASE("label marginals equal region areas") {
  const SceneSpec spec = make_complementary_spec();
  const SyntheticScene s = generate_scene(spec);
  std::vector<long> counts(3, 0);
  for (auto l : s.scene.labels())
    if (l != kUnlabeled) ++counts[l];
  for (const Region& r : spec.regions) CHECK(counts[r.label] == long(r.height) * r.width);
}

TEST_CASE("complementary scene spec invariants") {
  const SceneSpec spec = make_complementary_spec();
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.num_classes == 3);
  CHECK(spec.bands.size() == 2);
  const auto& b1 = spec.bands[0].centers;
  const auto& b2 = spec.bands[1].centers;
  CHECK((b1[1].matrix() - 1.05 * b1[0].matrix()).norm() < 1e-12);
  CHECK((b2[2].matrix() - 1.05 * b2[1].matrix()).norm() < 1e-12);
}

TEST_CASE("Wishart ML oracle confuses the designed pair of each band") {
  const SceneSpec spec = make_complementary_spec();
  const SyntheticScene s = generate_scene(spec);
  const std::vector<int> band1 = {0}, band2 = {1}, joint = {0, 1};
  const oracle::MlResult r1 = oracle::wishart_ml(spec, s.scene, band1);
  const oracle::MlResult r2 = oracle::wishart_ml(spec, s.scene, band2);
  const oracle::MlResult rj = oracle::wishart_ml(spec, s.scene, joint);
  MESSAGE("band1 " << r1.per_class[0] << " " << r1.per_class[1] << " " << r1.per_class[2]);
  MESSAGE("band2 " << r2.per_class[0] << " " << r2.per_class[1] << " " << r2.per_class[2]);
  MESSAGE("joint OA " << rj.oa);
  CHECK(r1.per_class[0] < 0.8);
  CHECK(r1.per_class[1] < 0.8);
  CHECK(r2.per_class[1] < 0.8);
  CHECK(r2.per_class[2] < 0.8);
  CHECK(rj.oa > r1.oa);
  CHECK(rj.oa > r2.oa);
}

TEST_CASE("scene spec JSON round trip") {
  const SceneSpec spec = make_complementary_spec(48, 0.15, 99);
  const SceneSpec back = spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  CHECK(to_json(back).dump() == to_json(spec).dump());
  CHECK(generate_scene(back).scene.bands[1].features == generate_scene(spec).scene.bands[1].features);
}

TEST_CASE("scene spec validation") {
  SceneSpec s = make_separable_spec();
  s.impurity = 0.5;
  CHECK_THROWS_AS(s.validate(), ValidationError);

  s = make_separable_spec();
  s.regions.pop_back();
  CHECK_THROWS_AS(s.validate(), ValidationError);

  s = make_separable_spec();
  s.regions[0].width = 1000;
  CHECK_THROWS_AS(s.validate(), ValidationError);

  s = make_separable_spec();
  Matrix3c singular = Matrix3c::Zero();
  singular(0, 0) = 1.0;
  s.bands[0].centers[0] = HermitianCov3::from_matrix_fast(singular);
  CHECK_THROWS(s.validate());

  nlohmann::json j = to_json(make_separable_spec());
  j["regions"][0]["shape"] = "hexagon";
  CHECK_THROWS_AS(spec_from_json(j), ValidationError);
}

TEST_CASE("generated scenes survive a disk round trip") {
  const fs::path dir = fs::temp_directory_path() / "skdnet_test_datagen_rt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const SyntheticScene s = generate_scene(make_complementary_spec(32, 0.1, 4));
  io::write_scene(dir, s.scene);
  const io::Scene back = io::read_scene(dir / "manifest.json");
  REQUIRE(back.bands.size() == 2);
  for (int b = 0; b < 2; ++b) {
    CHECK(back.bands[b].features == s.scene.bands[b].features);
    CHECK(back.bands[b].band_tag == s.scene.bands[b].band_tag);
  }
  CHECK(back.labels() == s.scene.labels());
}
