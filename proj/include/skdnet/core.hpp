#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace skd {

using Matrix3c = Eigen::Matrix3cd;

inline constexpr int kFeatureDim = 9;
inline constexpr std::uint8_t kUnlabeled = 255;

/// 3x3 complex Hermitian positive-semidefinite covariance of one pixel.
///
/// Instances are only created through validating factories, so holders can
/// rely on: Hermitian symmetry, real non-negative diagonal, and eigenvalues
/// no lower than -1e-9 * trace.
class HermitianCov3 {
 public:
  HermitianCov3() : m_(Matrix3c::Identity()) {}

  /// Validates the full invariant set; throws ValidationError.
  static HermitianCov3 from_matrix(const Matrix3c& m);
  /// Hermitian and diagonal checks only (no eigen decomposition).
  static HermitianCov3 from_matrix_fast(const Matrix3c& m);

  static HermitianCov3 identity() { return HermitianCov3(); }
  static HermitianCov3 diagonal(double a, double b, double c);

  const Matrix3c& matrix() const { return m_; }
  std::complex<double> operator()(int i, int j) const { return m_(i, j); }
  double trace() const { return m_.trace().real(); }

  friend bool operator==(const HermitianCov3& a, const HermitianCov3& b) { return a.m_ == b.m_; }

 private:
  explicit HermitianCov3(const Matrix3c& m) : m_(m) {}
  Matrix3c m_;
};

/// [C11, Re C12, Im C12, Re C13, Im C13, C22, Re C23, Im C23, C33]
using Feature9 = std::array<double, kFeatureDim>;

Feature9 vectorize_covariance(const HermitianCov3& c);
/// Validating overload for raw matrices: rejects asymmetry beyond 1e-9
/// relative to the largest entry.
Feature9 vectorize_covariance(const Matrix3c& m);
/// Upper triangle is read from `v`, the lower triangle is its conjugate.
/// Diagonal entries below -1e-9 are rejected.
HermitianCov3 devectorize(std::span<const double, kFeatureDim> v);
HermitianCov3 devectorize(std::span<const float, kFeatureDim> v);

/// H x W raster of 9-D features (row-major, channel-last) with optional labels.
struct PolsarRaster {
  int height = 0;
  int width = 0;
  std::vector<float> features;
  std::optional<std::vector<std::uint8_t>> labels;
  std::string band_tag;

  PolsarRaster() = default;
  PolsarRaster(int h, int w, std::string tag = {});

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::span<const float, kFeatureDim> pixel(int row, int col) const;
  std::span<float, kFeatureDim> pixel(int row, int col);
  std::uint8_t label(int row, int col) const;

  /// Shape checks; labels must be < num_classes or kUnlabeled when given.
  void validate(std::optional<int> num_classes = std::nullopt) const;
};

struct Origin {
  int row = 0;
  int col = 0;
  friend bool operator==(const Origin&, const Origin&) = default;
};

/// s x s window of one or more bands stacked channel-wise (9 per band).
struct Sample {
  int size = 0;
  int bands = 1;
  std::vector<float> patch;  // size * size * 9 * bands, row-major channel-last
  std::uint8_t label = kUnlabeled;
  Origin origin;
  std::string band_tag;

  int channels() const { return kFeatureDim * bands; }
  int pixel_count() const { return size * size; }
  std::span<const float, kFeatureDim> pixel(int index, int band = 0) const;
  std::span<float, kFeatureDim> pixel(int index, int band = 0);
  HermitianCov3 covariance(int index, int band = 0) const;
};

enum class ExtractMode { training, inference };

/// Top-left corners of all s x s windows visited with `stride`. The last
/// row/column of windows is shifted to end exactly at the image border
/// when the stride does not land there.
std::vector<Origin> window_origins(int height, int width, int s, int stride);

/// Center pixel of a window (s/2, s/2 relative to the origin, integer division).
inline Origin window_center(Origin o, int s) { return {o.row + s / 2, o.col + s / 2}; }

/// One sample per window whose center pixel is labeled. In inference mode
/// the raster may be unlabeled and every window is emitted.
std::vector<Sample> extract_samples(const PolsarRaster& raster, int s, int stride,
                                    ExtractMode mode = ExtractMode::training);

/// Builds the sample at `origin` from one or more co-registered rasters.
/// The label is read from the first raster carrying labels.
Sample make_sample(std::span<const PolsarRaster* const> bands, Origin origin, int s);

/// Per-channel standardization statistics.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  int channels() const { return static_cast<int>(mean.size()); }
  static ChannelStats compute(std::span<const Sample> samples);
  /// (x - mean) / std applied per channel.
  std::vector<float> normalize(const Sample& sample) const;
};

}  // namespace skd
