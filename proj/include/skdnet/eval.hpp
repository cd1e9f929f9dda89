#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skdnet/io.hpp"

namespace skd::eval {

/// F[i][j] = samples of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  int num_classes() const { return m_; }
  std::int64_t at(int truth, int pred) const { return f_[index(truth, pred)]; }
  std::int64_t total() const { return total_; }
  std::int64_t row_sum(int i) const;
  std::int64_t col_sum(int j) const;

  void add(int truth, int pred, std::int64_t count = 1);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);

 private:
  std::size_t index(int truth, int pred) const;

  int m_ = 0;
  std::vector<std::int64_t> f_;
  std::int64_t total_ = 0;
};

/// Counts (label, prediction) pairs; unlabeled (255) labels are skipped.
/// Throws ValidationError on length mismatch or a class index >= M.
ConfusionMatrix accumulate(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels, int num_classes);

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  std::optional<double> kappa;  // empty when p_e == 1
  double pe = 0.0;
  std::vector<std::optional<double>> per_class;  // empty for classes without samples
  std::vector<int> excluded;                     // classes left out of AA
};

/// Throws ValidationError when the matrix is empty. Classes without samples
/// are excluded from AA and reported through `excluded` and a warning on
/// stderr.
Metrics oa_aa_kappa(const ConfusionMatrix& f);

/// {per_class_accuracy, OA, AA, kappa, confusion}; undefined values are null.
nlohmann::ordered_json metrics_json(const Metrics& m, const ConfusionMatrix& f);

/// Binary PPM (P6) of a class raster; kUnlabeled is black.
std::string render_ppm(std::span<const std::uint8_t> classes, int height, int width, std::span<const io::Rgb> palette,
                       int num_classes);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<io::Rgb> pixels;
};

RgbImage parse_ppm(const std::string& bytes);

/// Inverse of render_ppm for an injective palette. Black maps to kUnlabeled;
/// colors outside the palette throw FormatError.
std::vector<std::uint8_t> classes_from_image(const RgbImage& image, std::span<const io::Rgb> palette);

}  // namespace skd::eval
