#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "skdnet/errors.hpp"
#include "skdnet/wishart.hpp"

using namespace skd;
using namespace skd::wishart;

namespace {

Eigen::MatrixXcd scalar(double x) {
  Eigen::MatrixXcd m(1, 1);
  m(0, 0) = x;
  return m;
}

Sample sample_of(const std::vector<HermitianCov3>& pixels) {
  Sample s;
  s.size = 1;
  while (s.size * s.size < static_cast<int>(pixels.size())) ++s.size;
  REQUIRE(s.size * s.size == static_cast<int>(pixels.size()));
  s.patch.resize(pixels.size() * kFeatureDim);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto v = vectorize_covariance(pixels[i]);
    std::copy(v.begin(), v.end(), s.pixel(static_cast<int>(i)).begin());
  }
  return s;
}

double frobenius_rel(const Matrix3c& est, const Matrix3c& truth) { return (est - truth).norm() / truth.norm(); }

}  // namespace

TEST_CASE("wishart_distance closed forms") {
  CHECK(std::abs(wishart_distance(HermitianCov3::identity(), HermitianCov3::identity()) - 3.0) < 1e-12);
  CHECK(wishart_distance(HermitianCov3::identity(), HermitianCov3::diagonal(2, 2, 2)) ==
        doctest::Approx(1.5 + std::log(8.0)).epsilon(1e-12));
  CHECK(wishart_distance(HermitianCov3::identity(), HermitianCov3::diagonal(2, 2, 2)) ==
        doctest::Approx(3.5794).epsilon(1e-4));
}

TEST_CASE("wishart_distance agrees with a dense inverse and determinant") {
  CounterRng rng(1);
  for (int t = 0; t < 200; ++t) {
    const HermitianCov3 c = oracle::random_spd(rng), s = oracle::random_spd(rng, 2.0);
    CHECK(wishart_distance(c, s) == doctest::Approx(oracle::dense_distance(c.matrix(), s.matrix())).epsilon(1e-10));
    const CenterFactor f(s);
    const auto v = vectorize_covariance(c);
    std::array<float, 9> vf;
    std::copy(v.begin(), v.end(), vf.begin());
    const HermitianCov3 cf = devectorize(std::span<const float, 9>(vf));
    CHECK(f.trace_term(std::span<const float, 9>(vf)) == doctest::Approx(f.trace_term(cf)).epsilon(1e-10));
  }
}

TEST_CASE("wishart_distance is affine in C") {
  CounterRng rng(2);
  for (int t = 0; t < 50; ++t) {
    const HermitianCov3 c1 = oracle::random_spd(rng), c2 = oracle::random_spd(rng), s = oracle::random_spd(rng);
    const double a = rng.uniform();
    const HermitianCov3 mix = HermitianCov3::from_matrix_fast(a * c1.matrix() + (1 - a) * c2.matrix());
    const double lhs = wishart_distance(mix, s);
    const double rhs = a * wishart_distance(c1, s) + (1 - a) * wishart_distance(c2, s);
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("argmin of the distance equals argmin of the trace term") {
  CounterRng rng(3);
  for (int t = 0; t < 100; ++t) {
    const HermitianCov3 s = oracle::random_spd(rng);
    const CenterFactor f(s);
    int best_d = 0, best_t = 0;
    double md = 1e300, mt = 1e300;
    for (int i = 0; i < 20; ++i) {
      const HermitianCov3 c = oracle::random_spd(rng);
      const double d = wishart_distance(c, s), tr = f.trace_term(c);
      if (d < md) md = d, best_d = i;
      if (tr < mt) mt = tr, best_t = i;
    }
    CHECK(best_d == best_t);
  }
}

TEST_CASE("non positive definite centers raise numerical errors") {
  Matrix3c m = Matrix3c::Zero();
  m(0, 0) = 1.0;
  CHECK_THROWS_AS(wishart_distance(HermitianCov3::identity(), HermitianCov3::from_matrix_fast(m)), NumericalError);
}

TEST_CASE("log density reductions for q = 1") {
  for (double c : {0.1, 0.7, 1.0, 3.5}) {
    CHECK(wishart_log_pdf(scalar(c), scalar(1.0), 1) == doctest::Approx(-c).epsilon(1e-12));
    CHECK(wishart_log_pdf(scalar(c), scalar(1.0), 2) ==
          doctest::Approx(std::log(4.0 * c) - 2.0 * c).epsilon(1e-12));
  }
  CHECK(wishart_log_pdf(scalar(1.0), scalar(1.0), 2) == doctest::Approx(std::log(4.0) - 2.0).epsilon(1e-12));
}

TEST_CASE("q = 1 density integrates to one") {
  for (int looks : {1, 2, 4, 7})
    for (double sigma : {0.5, 1.0, 3.0}) {
      const double total = oracle::integrate_q1_density(looks, sigma, 60.0 * sigma, 200000);
      CHECK(std::abs(total - 1.0) < 1e-4);
    }
}

TEST_CASE("log density is maximized at Sigma = C along t * C") {
  CounterRng rng(4);
  for (int t = 0; t < 10; ++t) {
    const HermitianCov3 c = oracle::random_spd(rng);
    double best_t = 0.0, best = -1e300;
    for (int k = 50; k <= 200; ++k) {
      const double scale = k / 100.0;
      const double v = wishart_log_pdf(c, {4, HermitianCov3::from_matrix_fast(scale * c.matrix())});
      if (v > best) best = v, best_t = scale;
    }
    CHECK(best_t == doctest::Approx(1.0));
  }
}

TEST_CASE("log density domain errors") {
  CHECK_THROWS_AS(wishart_log_pdf(HermitianCov3::identity(), {2, HermitianCov3::identity()}), DomainError);
  CounterRng rng(1);
  CHECK_THROWS_AS(sample_wishart({2, HermitianCov3::identity()}, rng), DomainError);
}

TEST_CASE("log density in q = 3 matches the closed form at C = Sigma = I") {
  // L q ln L + (L - q) * 0 - L q - ln K - 0 with L = 4.
  const double L = 4, q = 3;
  const double log_k = 3 * std::log(M_PI) + std::lgamma(4) + std::lgamma(3) + std::lgamma(2);
  CHECK(wishart_log_pdf(HermitianCov3::identity(), {4, HermitianCov3::identity()}) ==
        doctest::Approx(L * q * std::log(L) - L * q - log_k).epsilon(1e-12));
}

TEST_CASE("sampler moments") {
  const HermitianCov3 sigma = HermitianCov3::diagonal(1, 2, 3);
  CounterRng rng(2024);
  Matrix3c mean = Matrix3c::Zero();
  std::array<double, 3> sq{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const HermitianCov3 c = sample_wishart({4, sigma}, rng);
    for (int k = 0; k < 3; ++k) {
      CHECK_FALSE(c(k, k).real() < 0.0);
      sq[k] += c(k, k).real() * c(k, k).real();
    }
    CHECK((c.matrix() - c.matrix().adjoint()).norm() == 0.0);
    mean += c.matrix();
  }
  mean /= n;
  CHECK(frobenius_rel(mean, sigma.matrix()) < 0.05);
  for (int k = 0; k < 3; ++k) {
    const double m = mean(k, k).real();
    const double var = sq[k] / n - m * m;
    const double expected = sigma(k, k).real() * sigma(k, k).real() / 4.0;
    CHECK(std::abs(var - expected) / expected < 0.10);
  }
}

TEST_CASE("sampler is deterministic per seed") {
  const WishartParams p{4, HermitianCov3::diagonal(1, 2, 3)};
  CounterRng a(9, 1), b(9, 1), c(10, 1);
  for (int i = 0; i < 20; ++i) {
    const HermitianCov3 x = sample_wishart(p, a);
    CHECK(x == sample_wishart(p, b));
    CHECK_FALSE(x == sample_wishart(p, c));
  }
}

TEST_CASE("sample_center is the regularized pixel mean") {
  const HermitianCov3 c = HermitianCov3::diagonal(1.5, 0.5, 2.0);
  const HermitianCov3 same = sample_center(sample_of({c, c, c, c}));
  CHECK((same.matrix() - c.matrix()).norm() < 1e-5);

  const HermitianCov3 two = sample_center(sample_of({HermitianCov3::diagonal(2, 2, 2), HermitianCov3::diagonal(4, 4, 4),
                                                     HermitianCov3::diagonal(2, 2, 2), HermitianCov3::diagonal(4, 4, 4)}));
  CHECK((two.matrix() - HermitianCov3::diagonal(3, 3, 3).matrix()).norm() < 1e-5);

  CounterRng rng(6);
  const Sample s = oracle::random_sample(12, 1, rng);
  Matrix3c sum = Matrix3c::Zero();
  for (int i = 0; i < s.pixel_count(); ++i) sum += s.covariance(i).matrix();
  Matrix3c brute = sum / double(s.pixel_count());
  const double eps = 1e-6 * brute.trace().real() / 3.0;
  brute += eps * Matrix3c::Identity();
  CHECK((sample_center(s).matrix() - brute).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("regularization makes rank deficient centers factorizable") {
  const Feature9 v = vectorize_covariance(HermitianCov3::diagonal(1, 0, 0));
  std::vector<HermitianCov3> px(4, devectorize(std::span<const double, 9>(v)));
  const HermitianCov3 center = sample_center(sample_of(px));
  CHECK_NOTHROW(CenterFactor{center});
}
