#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skdnet/core.hpp"
#include "skdnet/nn/adam.hpp"
#include "skdnet/nn/checkpoint.hpp"
#include "skdnet/nn/model.hpp"

namespace skd::dgsd {

/// -(1/M) * sum_i y(i) ln out(i) for a one-hot y, probabilities clamped at 1e-12.
double ce_loss(std::span<const double> out, int label);
/// sum_i t(i) ln(t(i) / s(i)), with 0 ln 0 = 0.
double kl_loss(std::span<const double> teacher, std::span<const double> student);
double combined_loss(std::span<const double> student, std::span<const double> teacher, int label, double alpha);

enum class Branch { band1, band2 };

struct GateDecision {
  Branch chosen = Branch::band1;
  double max1 = 0.0;
  double max2 = 0.0;
};

/// band1 iff max(out1) >= max(out2).
GateDecision select_teacher(std::span<const double> out1, std::span<const double> out2);

/// Per-class tally of gate decisions.
struct GateHistogram {
  std::vector<long long> band1;
  std::vector<long long> band2;

  explicit GateHistogram(int num_classes = 0) : band1(num_classes, 0), band2(num_classes, 0) {}
  void add(int label, Branch b);
  /// class,band1_fraction,band2_fraction
  std::string to_csv() const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double oa = 0.0;
};

/// epoch,loss,OA
std::string metrics_csv(std::span<const EpochMetrics> curve);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;
  nn::StepDecay schedule;
  nn::AdamConfig adam;
  bool use_sdsr = true;
  int looks = 4;
  int threads = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct DistillConfig {
  double alpha = 0.7;
  TrainConfig train;

  void validate() const;
};

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochMetrics> curve;
};

struct StudentResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochMetrics> curve;
  GateHistogram gates;
};

/// Channel slice of one band of a multi-band sample.
Sample band_slice(const Sample& sample, int band);
/// Stacks co-registered single-band samples channel-wise. Throws
/// ValidationError when origins or labels differ.
Sample concat_bands(const Sample& band1, const Sample& band2);
std::vector<Sample> concat_bands(std::span<const Sample> band1, std::span<const Sample> band2);

/// Accuracy of predictions (SDSR per `use_sdsr`) on labeled samples.
double overall_accuracy(const nn::Model<float>& model, const ChannelStats& stats, std::span<const Sample> samples,
                        bool use_sdsr, int looks, int threads, std::uint64_t seed);

/// Trains one branch on single-band samples by cross entropy. `holdout`
/// (may be empty) feeds the OA column of the curve. `meta` is echoed into
/// the checkpoint. Throws NumericalError on divergence.
TrainResult train_teacher(std::span<const Sample> train, std::span<const Sample> holdout,
                          const nn::ModelConfig& model_config, const TrainConfig& config,
                          const nlohmann::json& meta = nlohmann::json::object());

/// Trains the 18-channel student on aligned band samples under gate-selected
/// teacher guidance. Teachers are read only and may be null only when
/// alpha == 0.
StudentResult train_student(std::span<const Sample> band1_train, std::span<const Sample> band2_train,
                            std::span<const Sample> band1_holdout, std::span<const Sample> band2_holdout,
                            const nn::Checkpoint* teacher1, const nn::Checkpoint* teacher2,
                            const nn::ModelConfig& model_config, const DistillConfig& config,
                            const nlohmann::json& meta = nlohmann::json::object());

}  // namespace skd::dgsd
