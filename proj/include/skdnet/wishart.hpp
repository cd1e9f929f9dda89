#pragma once

#include <span>

#include <Eigen/Core>

#include "skdnet/core.hpp"
#include "skdnet/rng.hpp"

namespace skd::wishart {

/// Complex Wishart parameters: number of looks L and center Sigma (q = 3).
struct WishartParams {
  int looks = 4;
  HermitianCov3 center;
};

/// Default number of looks for pixel generation and synthetic scenes.
inline constexpr int kDefaultLooks = 4;

/// Sigma + eps * I with eps = 1e-6 * trace(Sigma) / q.
HermitianCov3 regularize(const HermitianCov3& sigma);

/// Mean covariance of all s*s pixels of one band, regularized.
HermitianCov3 sample_center(const Sample& sample, int band = 0);

/// Cholesky-based precomputation of Sigma^-1 and ln det Sigma, so that many
/// pixels can be scored against one center.
class CenterFactor {
 public:
  /// Throws NumericalError if Sigma is not positive definite.
  explicit CenterFactor(const HermitianCov3& sigma);

  /// Tr(Sigma^-1 C) + ln det Sigma.
  double distance(const HermitianCov3& c) const { return trace_term(c) + log_det_; }
  /// Tr(Sigma^-1 C) from the 9-D feature vector (no Hermitian object needed).
  double trace_term(std::span<const float, kFeatureDim> v) const;
  double trace_term(const HermitianCov3& c) const;
  double log_det() const { return log_det_; }
  const Matrix3c& inverse() const { return inverse_; }
  /// Lower Cholesky factor of Sigma.
  const Matrix3c& cholesky() const { return chol_; }

 private:
  Matrix3c inverse_;
  Matrix3c chol_;
  double log_det_ = 0.0;
};

/// Wishart distance Tr(Sigma^-1 C) + ln det Sigma.
double wishart_distance(const HermitianCov3& c, const HermitianCov3& sigma);

/// Log of the complex Wishart density of C given (L, Sigma) for any
/// dimension q:
///   Lq ln L + (L-q) ln|C| - L Tr(Sigma^-1 C) - ln K(L,q) - L ln|Sigma|,
///   ln K(L,q) = q(q-1)/2 ln pi + sum_{i=1..q} lgamma(L-i+1).
/// Throws DomainError when L < q.
double wishart_log_pdf(const Eigen::MatrixXcd& c, const Eigen::MatrixXcd& sigma, int looks);
double wishart_log_pdf(const HermitianCov3& c, const WishartParams& params);

/// C = (1/L) sum_k z_k z_k^H with z_k = chol(Sigma) * n_k, n_k standard
/// circular complex normal (real and imaginary parts N(0, 1/2)).
HermitianCov3 sample_wishart(const WishartParams& params, CounterRng& rng);
/// Same draw using an existing factor of the center.
HermitianCov3 sample_wishart(const CenterFactor& factor, int looks, CounterRng& rng);

}  // namespace skd::wishart
