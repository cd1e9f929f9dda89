#include "skdnet/dgsd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/nn/ops.hpp"
#include "skdnet/rng.hpp"
#include "skdnet/sdsr.hpp"

namespace skd::dgsd {

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kShuffleTag = 0xDE5;
constexpr std::uint64_t kRectifyTag = 0x5D5B;
constexpr std::uint64_t kHoldoutTag = 0xE7A1;
constexpr std::uint64_t kTeacherTag = 0x7EAC;

void check_probs(std::span<const double> p, const char* what) {
  if (p.empty()) throw ValidationError(fmt::format("{}: empty probability vector", what));
  for (double v : p)
    if (!std::isfinite(v) || v < 0.0) throw ValidationError(fmt::format("{}: invalid probability {}", what, v));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(split_seed(seed, kShuffleTag), static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

CounterRng rectify_rng(std::uint64_t seed, std::size_t index, int epoch) {
  return CounterRng(split_seed(seed, kRectifyTag), (static_cast<std::uint64_t>(index) << 20) ^ static_cast<std::uint64_t>(epoch));
}

void check_samples(std::span<const Sample> samples, const nn::ModelConfig& mc, const char* what) {
  for (const auto& s : samples) {
    if (s.size != mc.window)
      throw ValidationError(fmt::format("{}: sample size {} does not match window {}", what, s.size, mc.window));
    if (s.channels() != mc.in_channels)
      throw ValidationError(fmt::format("{}: sample has {} channels, model expects {}", what, s.channels(), mc.in_channels));
    if (s.label >= mc.num_classes)
      throw ValidationError(fmt::format("{}: label {} outside {} classes", what, s.label, mc.num_classes));
  }
}

std::vector<int> labels_of(std::span<const Sample> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (const auto& s : batch) y.push_back(s.label);
  return y;
}

// One optimizer step on `batch` (already rectified when SDSR is on).
// `targets`, when non-null, holds B x M teacher probabilities.
double train_step(nn::Model<float>& model, nn::Adam<float>& opt, const ChannelStats& stats,
                  std::span<const Sample> batch, const nn::Tensor<float>* targets, double alpha, double lr) {
  nn::Tape<float> tape;
  const auto g = model.build_training(tape, sdsr::batch_input<float>(batch, stats));
  tape.set_scope("loss");
  const nn::Var probs = nn::ops::softmax(tape, g.cls_logits);
  const std::vector<int> y = labels_of(batch);
  nn::Var loss = nn::ops::ce_loss(tape, probs, y);
  if (targets != nullptr) {
    const nn::Var kl = nn::ops::kl_loss(tape, probs, *targets);
    loss = nn::ops::weighted_sum(tape, kl, static_cast<float>(alpha), loss, static_cast<float>(1.0 - alpha));
  }
  tape.backward(loss);
  model.zero_gradients();
  model.accumulate_gradients(tape, g);
  opt.step(model.parameters(), lr);
  return tape.value(loss)[0];
}

struct Loop {
  const TrainConfig& cfg;
  nn::Model<float>& model;
  nn::Adam<float>& opt;
  const ChannelStats& stats;

  // Runs one epoch over `train`; targets(i) yields the teacher row of
  // sample i and is only called when alpha > 0.
  template <typename TargetFn>
  double epoch(std::span<const Sample> train, int epoch, double alpha, TargetFn targets) {
    const double lr = cfg.schedule.lr(epoch);
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++b) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Sample> batch;
      std::vector<CounterRng> rngs;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train[order[i]]);
        rngs.push_back(rectify_rng(cfg.seed, order[i], epoch));
      }
      std::optional<nn::Tensor<float>> t;
      if (alpha > 0.0) {
        const int M = model.config().num_classes;
        t.emplace(std::vector<int>{static_cast<int>(batch.size()), M});
        for (std::size_t i = start; i < end; ++i) {
          const auto& row = targets(order[i]);
          std::copy(row.begin(), row.end(), t->data.begin() + static_cast<std::ptrdiff_t>((i - start) * M));
        }
      }
      try {
        if (cfg.use_sdsr) batch = sdsr::first_pass(model, stats, batch, rngs, cfg.looks, cfg.threads).rectified;
        const double loss = train_step(model, opt, stats, batch, t ? &*t : nullptr, alpha, lr);
        if (!std::isfinite(loss)) throw NumericalError("loss is not finite");
        total += loss * static_cast<double>(batch.size());
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("training diverged at epoch {} batch {}: {}", epoch, b, e.what()));
      }
    }
    return total / static_cast<double>(train.size());
  }
};

nlohmann::json merged_meta(const nlohmann::json& meta, const char* role, const TrainConfig& cfg) {
  nlohmann::json out = meta.is_object() ? meta : nlohmann::json::object();
  out["role"] = role;
  out["train"] = cfg.to_json();
  return out;
}

}  // namespace

double ce_loss(std::span<const double> out, int label) {
  check_probs(out, "ce_loss");
  if (label < 0 || label >= static_cast<int>(out.size()))
    throw ValidationError(fmt::format("ce_loss: label {} outside {} classes", label, out.size()));
  const double p = std::clamp(out[static_cast<std::size_t>(label)], nn::kProbFloor, 1.0);
  return -std::log(p) / static_cast<double>(out.size());
}

double kl_loss(std::span<const double> teacher, std::span<const double> student) {
  check_probs(teacher, "kl_loss");
  check_probs(student, "kl_loss");
  if (teacher.size() != student.size()) throw ValidationError("kl_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i] <= 0.0) continue;
    const double t = std::clamp(teacher[i], nn::kProbFloor, 1.0);
    const double q = std::clamp(student[i], nn::kProbFloor, 1.0);
    s += t * (std::log(t) - std::log(q));
  }
  return s;
}

double combined_loss(std::span<const double> student, std::span<const double> teacher, int label, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError(fmt::format("alpha {} outside [0, 1]", alpha));
  return alpha * kl_loss(teacher, student) + (1.0 - alpha) * ce_loss(student, label);
}

GateDecision select_teacher(std::span<const double> out1, std::span<const double> out2) {
  check_probs(out1, "select_teacher");
  check_probs(out2, "select_teacher");
  GateDecision d;
  d.max1 = *std::max_element(out1.begin(), out1.end());
  d.max2 = *std::max_element(out2.begin(), out2.end());
  d.chosen = d.max1 >= d.max2 ? Branch::band1 : Branch::band2;
  return d;
}

void GateHistogram::add(int label, Branch b) {
  if (label < 0 || label >= static_cast<int>(band1.size()))
    throw ValidationError(fmt::format("gate histogram: label {} out of range", label));
  (b == Branch::band1 ? band1 : band2)[static_cast<std::size_t>(label)] += 1;
}

std::string GateHistogram::to_csv() const {
  std::string out = "class,band1_fraction,band2_fraction\n";
  for (std::size_t m = 0; m < band1.size(); ++m) {
    const double n = static_cast<double>(band1[m] + band2[m]);
    const double f1 = n > 0 ? static_cast<double>(band1[m]) / n : 0.0;
    const double f2 = n > 0 ? static_cast<double>(band2[m]) / n : 0.0;
    out += fmt::format("{},{:.6f},{:.6f}\n", m, f1, f2);
  }
  return out;
}

std::string metrics_csv(std::span<const EpochMetrics> curve) {
  std::string out = "epoch,loss,OA\n";
  for (const auto& e : curve) {
    out += fmt::format("{},{:.8f},", e.epoch, e.loss);
    out += std::isnan(e.oa) ? std::string("\n") : fmt::format("{:.6f}\n", e.oa);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError(fmt::format("epochs must be >= 0, got {}", epochs));
  if (batch_size < 1) throw ConfigError(fmt::format("batch size must be >= 1, got {}", batch_size));
  if (looks < 3) throw ConfigError(fmt::format("looks must be >= 3, got {}", looks));
  if (threads < 1) throw ConfigError(fmt::format("threads must be >= 1, got {}", threads));
  if (!(schedule.base_lr > 0.0) || !(schedule.gamma > 0.0) || schedule.step_epochs < 1)
    throw ConfigError("invalid learning-rate schedule");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["lr"] = schedule.base_lr;
  j["lr_gamma"] = schedule.gamma;
  j["lr_step_epochs"] = schedule.step_epochs;
  j["adam"] = {adam.beta1, adam.beta2, adam.eps};
  j["use_sdsr"] = use_sdsr;
  j["looks"] = looks;
  return j;
}

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError(fmt::format("alpha {} outside [0, 1]", alpha));
  train.validate();
}

Sample band_slice(const Sample& sample, int band) {
  if (band < 0 || band >= sample.bands) throw ValidationError(fmt::format("band {} not in sample", band));
  Sample out;
  out.size = sample.size;
  out.bands = 1;
  out.label = sample.label;
  out.origin = sample.origin;
  out.band_tag = sample.band_tag;
  out.patch.resize(static_cast<std::size_t>(sample.pixel_count()) * kFeatureDim);
  for (int i = 0; i < sample.pixel_count(); ++i) {
    const auto src = sample.pixel(i, band);
    std::copy(src.begin(), src.end(), out.patch.begin() + static_cast<std::ptrdiff_t>(i) * kFeatureDim);
  }
  return out;
}

Sample concat_bands(const Sample& band1, const Sample& band2) {
  if (band1.bands != 1 || band2.bands != 1) throw ValidationError("concat_bands expects single-band samples");
  if (band1.size != band2.size || !(band1.origin == band2.origin) || band1.label != band2.label)
    throw ValidationError(fmt::format("misaligned band samples at ({}, {}) / ({}, {})", band1.origin.row,
                                      band1.origin.col, band2.origin.row, band2.origin.col));
  Sample out;
  out.size = band1.size;
  out.bands = 2;
  out.label = band1.label;
  out.origin = band1.origin;
  out.band_tag = band1.band_tag + "+" + band2.band_tag;
  out.patch.resize(static_cast<std::size_t>(out.pixel_count()) * 2 * kFeatureDim);
  for (int i = 0; i < out.pixel_count(); ++i) {
    const auto a = band1.pixel(i), b = band2.pixel(i);
    std::copy(a.begin(), a.end(), out.pixel(i, 0).begin());
    std::copy(b.begin(), b.end(), out.pixel(i, 1).begin());
  }
  return out;
}

std::vector<Sample> concat_bands(std::span<const Sample> band1, std::span<const Sample> band2) {
  if (band1.size() != band2.size())
    throw ValidationError(fmt::format("band sample counts differ: {} vs {}", band1.size(), band2.size()));
  std::vector<Sample> out;
  out.reserve(band1.size());
  for (std::size_t i = 0; i < band1.size(); ++i) out.push_back(concat_bands(band1[i], band2[i]));
  return out;
}

double overall_accuracy(const nn::Model<float>& model, const ChannelStats& stats, std::span<const Sample> samples,
                        bool use_sdsr, int looks, int threads, std::uint64_t seed) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto outs = sdsr::predict(model, stats, samples, use_sdsr, looks, threads, seed);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hit += outs[i].cls_argmax() == samples[i].label ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

TrainResult train_teacher(std::span<const Sample> train, std::span<const Sample> holdout,
                          const nn::ModelConfig& model_config, const TrainConfig& config, const nlohmann::json& meta) {
  config.validate();
  model_config.validate();
  if (train.empty()) throw ValidationError("no training samples");
  check_samples(train, model_config, "training set");
  check_samples(holdout, model_config, "holdout set");

  TrainResult result;
  result.checkpoint.stats = ChannelStats::compute(train);
  result.checkpoint.model = nn::Model<float>(model_config, split_seed(config.seed, kInitTag));
  auto& model = result.checkpoint.model;
  const auto& stats = result.checkpoint.stats;
  nn::Adam<float> opt(model.parameters(), config.adam);
  Loop loop{config, model, opt, stats};
  const std::vector<double> none;
  for (int e = 0; e < config.epochs; ++e) {
    const double loss = loop.epoch(train, e, 0.0, [&](std::size_t) -> const std::vector<double>& { return none; });
    const double oa = overall_accuracy(model, stats, holdout, config.use_sdsr, config.looks, config.threads,
                                       split_seed(config.seed, kHoldoutTag));
    result.curve.push_back({e, loss, oa});
  }
  result.checkpoint.meta = merged_meta(meta, "teacher", config);
  return result;
}

StudentResult train_student(std::span<const Sample> band1_train, std::span<const Sample> band2_train,
                            std::span<const Sample> band1_holdout, std::span<const Sample> band2_holdout,
                            const nn::Checkpoint* teacher1, const nn::Checkpoint* teacher2,
                            const nn::ModelConfig& model_config, const DistillConfig& config,
                            const nlohmann::json& meta) {
  config.validate();
  model_config.validate();
  const TrainConfig& tc = config.train;
  const std::vector<Sample> train = concat_bands(band1_train, band2_train);
  const std::vector<Sample> holdout = concat_bands(band1_holdout, band2_holdout);
  if (train.empty()) throw ValidationError("no training samples");
  check_samples(train, model_config, "student training set");
  check_samples(holdout, model_config, "student holdout set");
  const bool distill = config.alpha > 0.0;
  if (distill) {
    if (teacher1 == nullptr || teacher2 == nullptr) throw ConfigError("distillation with alpha > 0 needs both teachers");
    for (const auto* t : {teacher1, teacher2}) {
      if (t->model.config().num_classes != model_config.num_classes)
        throw ValidationError("teacher and student class counts differ");
      if (t->model.config().window != model_config.window) throw ValidationError("teacher and student windows differ");
    }
  }

  StudentResult result;
  result.gates = GateHistogram(model_config.num_classes);
  result.checkpoint.stats = ChannelStats::compute(train);
  result.checkpoint.model = nn::Model<float>(model_config, split_seed(tc.seed, kInitTag));
  auto& model = result.checkpoint.model;
  const auto& stats = result.checkpoint.stats;
  nn::Adam<float> opt(model.parameters(), tc.adam);
  Loop loop{tc, model, opt, stats};

  std::vector<std::vector<double>> targets(train.size());
  for (int e = 0; e < tc.epochs; ++e) {
    if (distill) {
      const std::uint64_t tseed = split_seed(split_seed(tc.seed, kTeacherTag), static_cast<std::uint64_t>(e));
      const auto out1 = sdsr::predict(teacher1->model, teacher1->stats, band1_train, tc.use_sdsr, tc.looks, tc.threads, tseed);
      const auto out2 = sdsr::predict(teacher2->model, teacher2->stats, band2_train, tc.use_sdsr, tc.looks, tc.threads, tseed);
      for (std::size_t i = 0; i < train.size(); ++i) {
        auto p1 = out1[i].cls_probabilities();
        auto p2 = out2[i].cls_probabilities();
        const GateDecision d = select_teacher(p1, p2);
        result.gates.add(train[i].label, d.chosen);
        targets[i] = d.chosen == Branch::band1 ? std::move(p1) : std::move(p2);
      }
    }
    const double loss = loop.epoch(train, e, config.alpha, [&](std::size_t i) -> const std::vector<double>& { return targets[i]; });
    const double oa = overall_accuracy(model, stats, holdout, tc.use_sdsr, tc.looks, tc.threads,
                                       split_seed(tc.seed, kHoldoutTag));
    result.curve.push_back({e, loss, oa});
  }
  nlohmann::json m = merged_meta(meta, "student", tc);
  m["alpha"] = config.alpha;
  result.checkpoint.meta = std::move(m);
  return result;
}

}  // namespace skd::dgsd
