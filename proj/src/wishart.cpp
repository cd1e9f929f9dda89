#include "skdnet/wishart.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "skdnet/errors.hpp"

namespace skd::wishart {

namespace {
constexpr int kQ = 3;
}

HermitianCov3 regularize(const HermitianCov3& sigma) {
  const double eps = 1e-6 * sigma.trace() / kQ;
  Matrix3c m = sigma.matrix();
  for (int i = 0; i < kQ; ++i) m(i, i) += eps;
  return HermitianCov3::from_matrix_fast(m);
}

HermitianCov3 sample_center(const Sample& sample, int band) {
  // Accumulate the 9 real coordinates; the mean of Hermitian matrices is
  // the mean of their vectorizations.
  Feature9 acc{};
  const int n = sample.pixel_count();
  for (int i = 0; i < n; ++i) {
    auto v = sample.pixel(i, band);
    for (int k = 0; k < kFeatureDim; ++k) acc[k] += static_cast<double>(v[k]);
  }
  for (double& a : acc) a /= n;
  return regularize(devectorize(std::span<const double, kFeatureDim>(acc)));
}

CenterFactor::CenterFactor(const HermitianCov3& sigma) {
  Eigen::LLT<Matrix3c> llt(sigma.matrix());
  if (llt.info() != Eigen::Success)
    throw NumericalError(fmt::format("Cholesky factorization of the Wishart center failed (trace {})", sigma.trace()));
  chol_ = llt.matrixL();
  double log_det = 0.0;
  for (int i = 0; i < kQ; ++i) {
    const double d = chol_(i, i).real();
    if (!(d > 0.0) || !std::isfinite(d)) throw NumericalError("Wishart center is not positive definite");
    log_det += 2.0 * std::log(d);
  }
  log_det_ = log_det;
  inverse_ = llt.solve(Matrix3c::Identity());
  // Symmetrize to kill round-off so that trace terms are exactly real.
  inverse_ = (0.5 * (inverse_ + inverse_.adjoint())).eval();
}

double CenterFactor::trace_term(std::span<const float, kFeatureDim> v) const {
  // Tr(A C) = sum_ij A_ij C_ji. Both are Hermitian, so the result is
  // sum_i A_ii C_ii + 2 Re sum_{i<j} A_ij conj(C_ij).
  const Matrix3c& a = inverse_;
  const double c11 = v[0], c22 = v[5], c33 = v[8];
  const std::complex<double> c12(v[1], v[2]), c13(v[3], v[4]), c23(v[6], v[7]);
  double t = a(0, 0).real() * c11 + a(1, 1).real() * c22 + a(2, 2).real() * c33;
  t += 2.0 * (a(0, 1) * std::conj(c12)).real();
  t += 2.0 * (a(0, 2) * std::conj(c13)).real();
  t += 2.0 * (a(1, 2) * std::conj(c23)).real();
  return t;
}

double CenterFactor::trace_term(const HermitianCov3& c) const {
  return (inverse_ * c.matrix()).trace().real();
}

double wishart_distance(const HermitianCov3& c, const HermitianCov3& sigma) {
  return CenterFactor(sigma).distance(c);
}

double wishart_log_pdf(const Eigen::MatrixXcd& c, const Eigen::MatrixXcd& sigma, int looks) {
  const int q = static_cast<int>(c.rows());
  if (c.cols() != q || sigma.rows() != q || sigma.cols() != q)
    throw ValidationError("wishart_log_pdf: C and Sigma must be square matrices of equal size");
  if (looks < q) throw DomainError(fmt::format("Wishart density is degenerate for L={} < q={}", looks, q));
  Eigen::LLT<Eigen::MatrixXcd> sig(sigma);
  Eigen::LLT<Eigen::MatrixXcd> cc(c);
  if (sig.info() != Eigen::Success) throw NumericalError("Wishart center is not positive definite");
  if (cc.info() != Eigen::Success) throw NumericalError("C is not positive definite");
  const auto log_det = [q](const Eigen::LLT<Eigen::MatrixXcd>& llt) {
    double s = 0.0;
    for (int i = 0; i < q; ++i) s += 2.0 * std::log(llt.matrixLLT()(i, i).real());
    return s;
  };
  const double L = looks;
  const double trace = sig.solve(c).trace().real();
  double log_k = 0.5 * q * (q - 1) * std::log(std::numbers::pi);
  for (int i = 1; i <= q; ++i) log_k += std::lgamma(L - i + 1);
  return L * q * std::log(L) + (L - q) * log_det(cc) - L * trace - log_k - L * log_det(sig);
}

double wishart_log_pdf(const HermitianCov3& c, const WishartParams& params) {
  return wishart_log_pdf(Eigen::MatrixXcd(c.matrix()), Eigen::MatrixXcd(params.center.matrix()), params.looks);
}

HermitianCov3 sample_wishart(const CenterFactor& factor, int looks, CounterRng& rng) {
  if (looks < 1) throw DomainError(fmt::format("number of looks must be >= 1, got {}", looks));
  const double half = std::sqrt(0.5);
  Matrix3c acc = Matrix3c::Zero();
  for (int k = 0; k < looks; ++k) {
    Eigen::Vector3cd n;
    for (int i = 0; i < kQ; ++i) {
      const double re = rng.normal() * half;
      const double im = rng.normal() * half;
      n(i) = {re, im};
    }
    const Eigen::Vector3cd z = factor.cholesky() * n;
    acc.noalias() += z * z.adjoint();
  }
  acc /= static_cast<double>(looks);
  return HermitianCov3::from_matrix_fast(0.5 * (acc + acc.adjoint()));
}

HermitianCov3 sample_wishart(const WishartParams& params, CounterRng& rng) {
  if (params.looks < kQ) throw DomainError(fmt::format("full-rank sampling needs L >= {}, got {}", kQ, params.looks));
  return sample_wishart(CenterFactor(params.center), params.looks, rng);
}

}  // namespace skd::wishart
