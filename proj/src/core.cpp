#include "skdnet/core.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include <Eigen/Eigenvalues>

#include "skdnet/errors.hpp"

namespace skd {

namespace {

constexpr double kSymTol = 1e-9;

Matrix3c checked_hermitian(const Matrix3c& m) {
  double scale = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag()))
        throw ValidationError("covariance entry is not finite");
      scale = std::max(scale, std::abs(m(i, j)));
    }
  const double tol = kSymTol * std::max(scale, 1e-300);
  for (int i = 0; i < 3; ++i) {
    if (std::abs(m(i, i).imag()) > tol)
      throw ValidationError(fmt::format("diagonal entry ({},{}) has imaginary part {}", i, i, m(i, i).imag()));
    if (m(i, i).real() < -tol)
      throw ValidationError(fmt::format("diagonal entry ({},{}) is negative: {}", i, i, m(i, i).real()));
    for (int j = i + 1; j < 3; ++j) {
      if (std::abs(m(i, j) - std::conj(m(j, i))) > tol)
        throw ValidationError(fmt::format("matrix is not Hermitian at ({},{})", i, j));
    }
  }
  // Canonical form: upper triangle is authoritative.
  Matrix3c h = m;
  for (int i = 0; i < 3; ++i) {
    h(i, i) = {std::max(m(i, i).real(), 0.0), 0.0};
    for (int j = i + 1; j < 3; ++j) h(j, i) = std::conj(h(i, j));
  }
  return h;
}

template <typename Real>
HermitianCov3 devectorize_impl(std::span<const Real, kFeatureDim> v) {
  for (int k = 0; k < kFeatureDim; ++k)
    if (!std::isfinite(static_cast<double>(v[k]))) throw ValidationError(fmt::format("feature {} is not finite", k));
  for (int k : {0, 5, 8})
    if (v[k] < -1e-9) throw ValidationError(fmt::format("negative diagonal feature v[{}] = {}", k, static_cast<double>(v[k])));
  Matrix3c m;
  const auto d = [&](int k) { return std::max(static_cast<double>(v[k]), 0.0); };
  const auto c = [&](int re, int im) {
    return std::complex<double>(static_cast<double>(v[re]), static_cast<double>(v[im]));
  };
  m(0, 0) = d(0);
  m(1, 1) = d(5);
  m(2, 2) = d(8);
  m(0, 1) = c(1, 2);
  m(0, 2) = c(3, 4);
  m(1, 2) = c(6, 7);
  m(1, 0) = std::conj(m(0, 1));
  m(2, 0) = std::conj(m(0, 2));
  m(2, 1) = std::conj(m(1, 2));
  return HermitianCov3::from_matrix_fast(m);
}

}  // namespace

HermitianCov3 HermitianCov3::from_matrix(const Matrix3c& m) {
  Matrix3c h = checked_hermitian(m);
  Eigen::SelfAdjointEigenSolver<Matrix3c> es(h, Eigen::EigenvaluesOnly);
  const double tol = 1e-9 * std::max(h.trace().real(), 0.0);
  if (es.eigenvalues().minCoeff() < -tol)
    throw ValidationError(fmt::format("covariance is not positive semidefinite (min eigenvalue {})",
                                      es.eigenvalues().minCoeff()));
  return HermitianCov3(h);
}

HermitianCov3 HermitianCov3::from_matrix_fast(const Matrix3c& m) { return HermitianCov3(checked_hermitian(m)); }

HermitianCov3 HermitianCov3::diagonal(double a, double b, double c) {
  Matrix3c m = Matrix3c::Zero();
  m(0, 0) = a;
  m(1, 1) = b;
  m(2, 2) = c;
  return from_matrix(m);
}

Feature9 vectorize_covariance(const HermitianCov3& c) {
  const Matrix3c& m = c.matrix();
  return {m(0, 0).real(), m(0, 1).real(), m(0, 1).imag(), m(0, 2).real(), m(0, 2).imag(),
          m(1, 1).real(), m(1, 2).real(), m(1, 2).imag(), m(2, 2).real()};
}

Feature9 vectorize_covariance(const Matrix3c& m) { return vectorize_covariance(HermitianCov3::from_matrix_fast(m)); }

HermitianCov3 devectorize(std::span<const double, kFeatureDim> v) { return devectorize_impl(v); }
HermitianCov3 devectorize(std::span<const float, kFeatureDim> v) { return devectorize_impl(v); }

// ---------------------------------------------------------------------------

PolsarRaster::PolsarRaster(int h, int w, std::string tag)
    : height(h), width(w), features(static_cast<std::size_t>(h) * w * kFeatureDim, 0.0f), band_tag(std::move(tag)) {}

std::span<const float, kFeatureDim> PolsarRaster::pixel(int row, int col) const {
  return std::span<const float, kFeatureDim>(features.data() + (static_cast<std::size_t>(row) * width + col) * kFeatureDim,
                                             kFeatureDim);
}

std::span<float, kFeatureDim> PolsarRaster::pixel(int row, int col) {
  return std::span<float, kFeatureDim>(features.data() + (static_cast<std::size_t>(row) * width + col) * kFeatureDim,
                                       kFeatureDim);
}

std::uint8_t PolsarRaster::label(int row, int col) const {
  if (!labels) return kUnlabeled;
  return (*labels)[static_cast<std::size_t>(row) * width + col];
}

void PolsarRaster::validate(std::optional<int> num_classes) const {
  if (height <= 0 || width <= 0) throw ValidationError(fmt::format("raster has invalid size {}x{}", height, width));
  if (features.size() != pixel_count() * kFeatureDim)
    throw ValidationError(fmt::format("raster features length {} != {}*{}*9", features.size(), height, width));
  if (labels) {
    if (labels->size() != pixel_count())
      throw ValidationError(fmt::format("label raster length {} != {}*{}", labels->size(), height, width));
    if (num_classes) {
      for (std::size_t i = 0; i < labels->size(); ++i) {
        const auto l = (*labels)[i];
        if (l != kUnlabeled && l >= *num_classes)
          throw ValidationError(fmt::format("label {} at pixel {} exceeds class count {}", l, i, *num_classes));
      }
    }
  }
}

std::span<const float, kFeatureDim> Sample::pixel(int index, int band) const {
  return std::span<const float, kFeatureDim>(patch.data() + static_cast<std::size_t>(index) * channels() + band * kFeatureDim,
                                             kFeatureDim);
}

std::span<float, kFeatureDim> Sample::pixel(int index, int band) {
  return std::span<float, kFeatureDim>(patch.data() + static_cast<std::size_t>(index) * channels() + band * kFeatureDim,
                                       kFeatureDim);
}

HermitianCov3 Sample::covariance(int index, int band) const { return devectorize(pixel(index, band)); }

// ---------------------------------------------------------------------------

std::vector<Origin> window_origins(int height, int width, int s, int stride) {
  if (s < 1 || s > std::min(height, width))
    throw ConfigError(fmt::format("window size {} does not fit a {}x{} raster", s, height, width));
  if (stride < 1) throw ConfigError(fmt::format("stride must be >= 1, got {}", stride));
  const auto axis = [&](int extent) {
    std::vector<int> pos;
    for (int p = 0; p + s <= extent; p += stride) pos.push_back(p);
    if (pos.back() != extent - s) pos.push_back(extent - s);
    return pos;
  };
  std::vector<Origin> out;
  const auto rows = axis(height);
  const auto cols = axis(width);
  out.reserve(rows.size() * cols.size());
  for (int r : rows)
    for (int c : cols) out.push_back({r, c});
  return out;
}

Sample make_sample(std::span<const PolsarRaster* const> bands, Origin origin, int s) {
  if (bands.empty()) throw ValidationError("make_sample needs at least one band");
  Sample out;
  out.size = s;
  out.bands = static_cast<int>(bands.size());
  out.origin = origin;
  out.patch.resize(static_cast<std::size_t>(s) * s * out.channels());
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (!out.band_tag.empty()) out.band_tag += "+";
    out.band_tag += bands[b]->band_tag;
  }
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const int idx = i * s + j;
      for (int b = 0; b < out.bands; ++b) {
        auto src = bands[b]->pixel(origin.row + i, origin.col + j);
        std::copy(src.begin(), src.end(), out.pixel(idx, b).begin());
      }
    }
  const Origin center = window_center(origin, s);
  for (const auto* band : bands)
    if (band->labels) {
      out.label = band->label(center.row, center.col);
      break;
    }
  return out;
}

std::vector<Sample> extract_samples(const PolsarRaster& raster, int s, int stride, ExtractMode mode) {
  raster.validate();
  if (mode == ExtractMode::training && !raster.labels)
    throw ValidationError("training extraction requires a label raster");
  const PolsarRaster* bands[] = {&raster};
  std::vector<Sample> out;
  for (const Origin& o : window_origins(raster.height, raster.width, s, stride)) {
    const Origin c = window_center(o, s);
    if (mode == ExtractMode::training && raster.label(c.row, c.col) == kUnlabeled) continue;
    out.push_back(make_sample(bands, o, s));
  }
  return out;
}

ChannelStats ChannelStats::compute(std::span<const Sample> samples) {
  if (samples.empty()) throw ValidationError("cannot compute channel statistics of an empty sample set");
  const int channels = samples.front().channels();
  std::vector<double> sum(channels, 0.0), sum_sq(channels, 0.0);
  std::size_t count = 0;
  for (const Sample& s : samples) {
    if (s.channels() != channels) throw ValidationError("samples disagree on channel count");
    for (std::size_t k = 0; k < s.patch.size(); ++k) {
      const double x = s.patch[k];
      sum[k % channels] += x;
      sum_sq[k % channels] += x * x;
    }
    count += static_cast<std::size_t>(s.pixel_count());
  }
  ChannelStats out;
  out.mean.resize(channels);
  out.stddev.resize(channels);
  for (int c = 0; c < channels; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = std::max(sum_sq[c] / static_cast<double>(count) - mean * mean, 0.0);
    out.mean[c] = mean;
    out.stddev[c] = std::max(std::sqrt(var), 1e-12);
  }
  return out;
}

std::vector<float> ChannelStats::normalize(const Sample& sample) const {
  const int channels = sample.channels();
  if (channels != this->channels())
    throw ValidationError(fmt::format("normalization expects {} channels, sample has {}", this->channels(), channels));
  std::vector<float> out(sample.patch.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const int c = static_cast<int>(k % channels);
    out[k] = static_cast<float>((sample.patch[k] - mean[c]) / stddev[c]);
  }
  return out;
}

}  // namespace skd
