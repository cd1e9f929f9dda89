#include "skdnet/eval.hpp"

#include <iostream>
#include <map>

#include <fmt/format.h>

#include "skdnet/errors.hpp"

namespace skd::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes) : m_(num_classes) {
  if (num_classes < 0) throw ValidationError("negative class count");
  f_.assign(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0);
}

std::size_t ConfusionMatrix::index(int truth, int pred) const {
  if (truth < 0 || truth >= m_ || pred < 0 || pred >= m_)
    throw ValidationError(fmt::format("confusion index ({}, {}) outside {} classes", truth, pred, m_));
  return static_cast<std::size_t>(truth) * static_cast<std::size_t>(m_) + static_cast<std::size_t>(pred);
}

std::int64_t ConfusionMatrix::row_sum(int i) const {
  std::int64_t s = 0;
  for (int j = 0; j < m_; ++j) s += at(i, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int j) const {
  std::int64_t s = 0;
  for (int i = 0; i < m_; ++i) s += at(i, j);
  return s;
}

void ConfusionMatrix::add(int truth, int pred, std::int64_t count) {
  if (count < 0) throw ValidationError("negative confusion count");
  f_[index(truth, pred)] += count;
  total_ += count;
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix f(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw ValidationError("confusion matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) f.add(static_cast<int>(i), static_cast<int>(j), rows[i][j]);
  }
  return f;
}

ConfusionMatrix accumulate(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels, int num_classes) {
  if (preds.size() != labels.size())
    throw ValidationError(fmt::format("{} predictions for {} labels", preds.size(), labels.size()));
  ConfusionMatrix f(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnlabeled) continue;
    if (labels[i] >= num_classes || preds[i] >= num_classes)
      throw ValidationError(fmt::format("entry {}: label {} / prediction {} outside {} classes", i, labels[i], preds[i],
                                        num_classes));
    f.add(labels[i], preds[i]);
  }
  return f;
}

Metrics oa_aa_kappa(const ConfusionMatrix& f) {
  if (f.total() <= 0) throw ValidationError("metrics need at least one counted sample");
  const int M = f.num_classes();
  const double n = static_cast<double>(f.total());
  Metrics out;
  out.per_class.resize(static_cast<std::size_t>(M));
  double diag = 0.0, aa_sum = 0.0, pe_sum = 0.0;
  int aa_count = 0;
  for (int i = 0; i < M; ++i) {
    diag += static_cast<double>(f.at(i, i));
    const std::int64_t row = f.row_sum(i);
    pe_sum += static_cast<double>(row) * static_cast<double>(f.col_sum(i));
    if (row == 0) {
      out.excluded.push_back(i);
      continue;
    }
    const double acc = static_cast<double>(f.at(i, i)) / static_cast<double>(row);
    out.per_class[static_cast<std::size_t>(i)] = acc;
    aa_sum += acc;
    ++aa_count;
  }
  if (!out.excluded.empty()) {
    std::string list;
    for (int c : out.excluded) list += fmt::format("{}{}", list.empty() ? "" : ", ", c);
    std::cerr << fmt::format("warning: classes without samples excluded from AA: {}\n", list);
  }
  out.oa = diag / n;
  out.aa = aa_sum / aa_count;
  out.pe = pe_sum / (n * n);
  if (out.pe < 1.0) out.kappa = (out.oa - out.pe) / (1.0 - out.pe);
  return out;
}

nlohmann::ordered_json metrics_json(const Metrics& m, const ConfusionMatrix& f) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& a : m.per_class) per.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  j["per_class_accuracy"] = per;
  j["OA"] = m.oa;
  j["AA"] = m.aa;
  j["kappa"] = m.kappa ? nlohmann::ordered_json(*m.kappa) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (int i = 0; i < f.num_classes(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int jdx = 0; jdx < f.num_classes(); ++jdx) row.push_back(f.at(i, jdx));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  return j;
}

std::string render_ppm(std::span<const std::uint8_t> classes, int height, int width, std::span<const io::Rgb> palette,
                       int num_classes) {
  if (height <= 0 || width <= 0) throw ValidationError("map dimensions must be positive");
  if (classes.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw ValidationError(fmt::format("{} classes for a {}x{} map", classes.size(), height, width));
  if (static_cast<int>(palette.size()) < num_classes)
    throw ValidationError(fmt::format("palette has {} colors for {} classes", palette.size(), num_classes));
  std::string out = fmt::format("P6\n{} {}\n255\n", width, height);
  out.reserve(out.size() + classes.size() * 3);
  for (std::uint8_t c : classes) {
    io::Rgb rgb{0, 0, 0};
    if (c != kUnlabeled) {
      if (c >= num_classes) throw ValidationError(fmt::format("class {} outside {} classes", c, num_classes));
      rgb = palette[c];
    }
    out.append(reinterpret_cast<const char*>(rgb.data()), 3);
  }
  return out;
}

RgbImage parse_ppm(const std::string& bytes) {
  const io::NetpbmHeader h = io::parse_netpbm_header(bytes, '6', "<ppm>");
  RgbImage img;
  img.height = h.height;
  img.width = h.width;
  img.pixels.resize(static_cast<std::size_t>(h.height) * static_cast<std::size_t>(h.width));
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    for (int k = 0; k < 3; ++k) img.pixels[i][k] = static_cast<std::uint8_t>(bytes[h.data_offset + 3 * i + k]);
  return img;
}

std::vector<std::uint8_t> classes_from_image(const RgbImage& image, std::span<const io::Rgb> palette) {
  std::map<io::Rgb, std::uint8_t> lookup;
  for (std::size_t c = 0; c < palette.size(); ++c) {
    if (palette[c] == io::Rgb{0, 0, 0}) throw ValidationError("palette color black is reserved for unlabeled pixels");
    if (!lookup.emplace(palette[c], static_cast<std::uint8_t>(c)).second)
      throw ValidationError(fmt::format("palette is not injective (class {})", c));
  }
  std::vector<std::uint8_t> out;
  out.reserve(image.pixels.size());
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const auto& px = image.pixels[i];
    if (px == io::Rgb{0, 0, 0}) {
      out.push_back(kUnlabeled);
      continue;
    }
    const auto it = lookup.find(px);
    if (it == lookup.end())
      throw FormatError(fmt::format("pixel {} color ({}, {}, {}) is not in the palette", i, px[0], px[1], px[2]));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace skd::eval
