#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skdnet/datagen.hpp"
#include "skdnet/dgsd.hpp"
#include "skdnet/eval.hpp"
#include "skdnet/io.hpp"
#include "skdnet/nn/checkpoint.hpp"

namespace skd::pipeline {

namespace fs = std::filesystem;

/// Scene source: a manifest on disk or a spec generated in memory.
struct SceneSource {
  std::string name;
  fs::path manifest;
  std::optional<datagen::SceneSpec> spec;

  io::Scene load() const;
};

inline const std::vector<std::string> kVariants = {"baseline", "baseline+SDSR", "baseline+SDSR+cat",
                                                   "baseline+SDSR+DGSD"};

/// Every knob of a run. Relative paths in a config file are resolved
/// against the file's directory.
struct RunConfig {
  SceneSource scene;
  fs::path out = "out";
  nn::ModelConfig model;
  double alpha = 0.7;
  int epochs = 30;
  int batch_size = 32;
  int looks = 4;
  std::uint64_t seed = 1;
  int threads = 1;
  double lr = 1e-3;
  double lr_gamma = 0.9;
  int lr_step_epochs = 50;
  bool use_sdsr = true;
  int train_per_class = 100;  // training windows per class
  // "spatial": training windows lie in the leftmost train_fraction of the
  // columns and evaluation covers pixels whose windows lie entirely to the
  // right of that area; "random": any labeled window, evaluation skips the
  // training centers only.
  std::string split = "spatial";
  double train_fraction = 0.5;
  int holdout_max = 300;      // windows used for the per-epoch OA column (0 = all)
  int band = 1;
  fs::path teacher1;  // student: defaults to <out>/teacher_band1.skd
  fs::path teacher2;
  fs::path checkpoint;  // eval / render-map

  // ablate
  std::vector<SceneSource> datasets;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants = kVariants;
  std::vector<double> alphas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  static RunConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {});
  static RunConfig load(const fs::path& path);
  /// Throws ConfigError naming the offending field.
  void validate() const;

  dgsd::TrainConfig train_config(bool sdsr) const;
};

/// Scene plus the training/holdout windows of every band. Window i of
/// every band has the same origin and label.
struct Dataset {
  io::Scene scene;
  int window = 0;
  std::vector<std::vector<Sample>> train;    // [band][i]
  std::vector<std::vector<Sample>> holdout;  // [band][i], capped at holdout_max
  std::vector<std::int64_t> train_centers;   // flat pixel indices
  nlohmann::ordered_json split;
};

/// Picks train_per_class labeled windows per class (all when fewer exist)
/// with a generator derived from cfg.seed from the training area; holdout
/// windows come from the evaluation area (see RunConfig::split).
Dataset prepare_dataset(io::Scene scene, const RunConfig& cfg);

/// band is 1-based.
dgsd::TrainResult run_teacher(const Dataset& data, int band, const RunConfig& cfg, bool use_sdsr);
dgsd::StudentResult run_student(const Dataset& data, const nn::Checkpoint* teacher1, const nn::Checkpoint* teacher2,
                                double alpha, const RunConfig& cfg);

struct SceneEvaluation {
  std::vector<std::uint8_t> predictions;  // H*W, every pixel classified
  eval::ConfusionMatrix confusion;
  eval::Metrics metrics;
};

/// Sliding-window classification of every pixel (window centered on the
/// pixel, clamped to the scene). Metrics cover the labeled pixels of the
/// checkpoint's evaluation area, never its training centers.
SceneEvaluation evaluate(const nn::Checkpoint& ckpt, const io::Scene& scene, int threads);

/// Files written to a staging directory and moved into place on commit.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path out_dir);
  ~StagedOutput();
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  fs::path path(const std::string& name) const { return staging_ / name; }
  void write(const std::string& name, const std::string& bytes);
  /// Registers a file the caller created at path(name).
  void adopt(const std::string& name);
  /// Renames every staged file into the output directory.
  void commit();

 private:
  fs::path out_;
  fs::path staging_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

void cmd_synth(const RunConfig& cfg);
void cmd_train_teacher(const RunConfig& cfg);
void cmd_train_student(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_render_map(const RunConfig& cfg);

struct AblationRun {
  std::string dataset;
  std::string variant;
  std::string band;  // "1", "2" or "dual"
  std::uint64_t seed = 0;
  std::optional<double> alpha;
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::string table_csv;  // one row per dataset x variant, then alpha rows
  std::string runs_csv;
  nlohmann::ordered_json summary;  // mean SDSR improvement per dataset and band
};

AblationReport run_ablation(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);

}  // namespace skd::pipeline
