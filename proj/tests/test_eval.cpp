#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skdnet/core.hpp"
#include "skdnet/errors.hpp"
#include "skdnet/eval.hpp"
#include "skdnet/rng.hpp"

using namespace skd;
using namespace skd::eval;

namespace {

struct Reference {
  double oa, aa, kappa;
};

// Direct formulas over a dense double matrix.
Reference reference_metrics(const std::vector<std::vector<double>>& f) {
  const std::size_t m = f.size();
  double n = 0, diag = 0, aa = 0, pe = 0;
  std::vector<double> rows(m, 0), cols(m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      n += f[i][j];
      rows[i] += f[i][j];
      cols[j] += f[i][j];
    }
  int present = 0;
  for (std::size_t i = 0; i < m; ++i) {
    diag += f[i][i];
    pe += rows[i] * cols[i];
    if (rows[i] > 0) {
      aa += f[i][i] / rows[i];
      ++present;
    }
  }
  pe /= n * n;
  const double oa = diag / n;
  return {oa, aa / present, (oa - pe) / (1 - pe)};
}

}  // namespace

TEST_CASE("hand-computed two-class fixture") {
  const ConfusionMatrix f = ConfusionMatrix::from_rows({{50, 10}, {10, 30}});
  const Metrics m = oa_aa_kappa(f);
  CHECK(std::abs(m.oa - 0.8) < 1e-6);
  CHECK(std::abs(m.aa - 0.791667) < 1e-6);
  CHECK(std::abs(m.pe - 0.52) < 1e-12);
  REQUIRE(m.kappa.has_value());
  CHECK(std::abs(*m.kappa - 0.583333) < 1e-6);
  CHECK(*m.per_class[0] == doctest::Approx(50.0 / 60.0));
  CHECK(*m.per_class[1] == doctest::Approx(0.75));
}

TEST_CASE("diagonal matrices give perfect scores") {
  const Metrics m = oa_aa_kappa(ConfusionMatrix::from_rows({{7, 0, 0}, {0, 3, 0}, {0, 0, 12}}));
  CHECK(m.oa == 1.0);
  CHECK(m.aa == 1.0);
  CHECK(*m.kappa == 1.0);
}

TEST_CASE("accumulate equals a direct tally on 10k pairs") {
  CounterRng rng(1);
  std::vector<std::uint8_t> preds, labels;
  std::vector<std::vector<std::int64_t>> tally(5, std::vector<std::int64_t>(5, 0));
  for (int i = 0; i < 10000; ++i) {
    const auto p = static_cast<std::uint8_t>(rng.below(5));
    const auto l = rng.below(10) == 0 ? kUnlabeled : static_cast<std::uint8_t>(rng.below(5));
    preds.push_back(p);
    labels.push_back(l);
    if (l != kUnlabeled) ++tally[l][p];
  }
  const ConfusionMatrix f = eval::accumulate(preds, labels, 5);
  std::int64_t total = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      CHECK(f.at(i, j) == tally[i][j]);
      total += tally[i][j];
    }
  CHECK(f.total() == total);

  std::vector<std::vector<double>> dense(5, std::vector<double>(5));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) dense[i][j] = static_cast<double>(tally[i][j]);
  const Reference ref = reference_metrics(dense);
  const Metrics m = oa_aa_kappa(f);
  CHECK(std::abs(m.oa - ref.oa) < 1e-12);
  CHECK(std::abs(m.aa - ref.aa) < 1e-12);
  CHECK(std::abs(*m.kappa - ref.kappa) < 1e-12);
}

TEST_CASE("accumulate input errors") {
  const std::vector<std::uint8_t> two = {0, 1}, three = {0, 1, 2}, none;
  CHECK_THROWS_AS(eval::accumulate(two, three, 3), ValidationError);
  CHECK_THROWS_AS(eval::accumulate(three, three, 2), ValidationError);
  CHECK(eval::accumulate(none, none, 3).total() == 0);
  CHECK_THROWS_AS(oa_aa_kappa(eval::accumulate(none, none, 3)), ValidationError);
  const std::vector<std::uint8_t> skipped = {kUnlabeled, kUnlabeled};
  CHECK(eval::accumulate(two, skipped, 3).total() == 0);
}

TEST_CASE("absent classes are excluded from AA") {
  const Metrics m = oa_aa_kappa(ConfusionMatrix::from_rows({{8, 2, 0}, {0, 0, 0}, {1, 0, 9}}));
  CHECK(m.excluded == std::vector<int>{1});
  CHECK_FALSE(m.per_class[1].has_value());
  CHECK(m.aa == doctest::Approx((0.8 + 0.9) / 2));
}

TEST_CASE("kappa is undefined when chance agreement is one") {
  const Metrics m = oa_aa_kappa(ConfusionMatrix::from_rows({{5, 0}, {0, 0}}));
  CHECK(m.pe == 1.0);
  CHECK_FALSE(m.kappa.has_value());
  CHECK(metrics_json(m, ConfusionMatrix::from_rows({{5, 0}, {0, 0}}))["kappa"].is_null());
}

TEST_CASE("kappa properties on random matrices") {
  CounterRng rng(2);
  for (int t = 0; t < 300; ++t) {
    const int n = 2 + static_cast<int>(rng.below(4));
    std::vector<std::vector<std::int64_t>> rows(n, std::vector<std::int64_t>(n));
    bool diagonal = true;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        rows[i][j] = i == j ? 1 + static_cast<std::int64_t>(rng.below(50))
                            : (rng.below(3) == 0 ? static_cast<std::int64_t>(rng.below(20)) : 0);
        diagonal = diagonal && (i == j || rows[i][j] == 0);
      }
    const Metrics m = oa_aa_kappa(ConfusionMatrix::from_rows(rows));
    REQUIRE(m.kappa.has_value());
    CHECK(*m.kappa <= m.oa + 1e-15);
    CHECK((std::abs(*m.kappa - 1.0) < 1e-12) == diagonal);

    // Relabeling classes consistently changes nothing.
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = (i + 1) % n;
    std::vector<std::vector<std::int64_t>> permuted(n, std::vector<std::int64_t>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) permuted[perm[i]][perm[j]] = rows[i][j];
    const Metrics p = oa_aa_kappa(ConfusionMatrix::from_rows(permuted));
    CHECK(p.oa == doctest::Approx(m.oa).epsilon(1e-14));
    CHECK(p.aa == doctest::Approx(m.aa).epsilon(1e-14));
    CHECK(*p.kappa == doctest::Approx(*m.kappa).epsilon(1e-14));
  }
}

TEST_CASE("metrics json layout") {
  const ConfusionMatrix f = ConfusionMatrix::from_rows({{50, 10}, {10, 30}});
  const auto j = metrics_json(oa_aa_kappa(f), f);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"per_class_accuracy", "OA", "AA", "kappa", "confusion"});
  CHECK(j["confusion"][0][1] == 10);
  CHECK(j["per_class_accuracy"].size() == 2);
}

TEST_CASE("render_ppm") {
  const std::vector<io::Rgb> palette = {io::Rgb{255, 0, 0}, io::Rgb{0, 0, 255}};
  const std::vector<std::uint8_t> uniform(6, 1);
  const RgbImage img = parse_ppm(render_ppm(uniform, 2, 3, palette, 2));
  CHECK(img.height == 2);
  CHECK(img.width == 3);
  for (const auto& px : img.pixels) CHECK(px == io::Rgb{0, 0, 255});

  const std::vector<std::uint8_t> mixed = {0, 1, kUnlabeled, 1, 0, 0};
  CHECK(classes_from_image(parse_ppm(render_ppm(mixed, 3, 2, palette, 2)), palette) == mixed);

  const std::vector<io::Rgb> short_palette = {io::Rgb{255, 0, 0}};
  CHECK_THROWS_AS(render_ppm(mixed, 3, 2, short_palette, 2), ValidationError);
  CHECK_THROWS_AS(render_ppm(mixed, 2, 2, palette, 2), ValidationError);
  const std::vector<io::Rgb> other = {io::Rgb{1, 2, 3}, io::Rgb{0, 0, 255}};
  CHECK_THROWS_AS(classes_from_image(parse_ppm(render_ppm(mixed, 3, 2, palette, 2)), other), FormatError);
}
