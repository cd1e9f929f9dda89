#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/pipeline.hpp"

namespace {

using skd::pipeline::RunConfig;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
  std::string config;
  std::string scene;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<double> alpha;
  std::optional<int> band;
  std::optional<int> epochs;

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
    if (!scene.empty()) {
      cfg.scene.manifest = scene;
      cfg.scene.spec.reset();
    }
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (out) cfg.out = *out;
    if (alpha) cfg.alpha = *alpha;
    if (band) cfg.band = *band;
    if (epochs) cfg.epochs = *epochs;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Overrides& o, const RunConfig& d) {
  cmd->add_option("--config", o.config, "run configuration JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed")->default_str(std::to_string(d.seed));
  cmd->add_option("--threads", o.threads, "worker threads")->default_str(std::to_string(d.threads));
  cmd->add_option("--out", o.out, "output directory")->default_str(d.out.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-band PolSAR classification with sample rectification and gated distillation"};
  app.require_subcommand(1);
  const RunConfig d;
  Overrides o;
  std::function<void(const RunConfig&)> action;

  const auto command = [&](const char* name, const char* help, void (*fn)(const RunConfig&)) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, o, d);
    cmd->callback([&action, fn] { action = fn; });
    return cmd;
  };

  CLI::App* synth = command("synth", "generate a synthetic dual-band scene", skd::pipeline::cmd_synth);
  (void)synth;

  CLI::App* teacher = command("train-teacher", "train one single-band branch", skd::pipeline::cmd_train_teacher);
  teacher->add_option("--scene", o.scene, "scene manifest (overrides the config)");
  teacher->add_option("--band", o.band, "band to train (1 or 2)")->default_str(std::to_string(d.band));
  teacher->add_option("--epochs", o.epochs, "training epochs")->default_str(std::to_string(d.epochs));

  CLI::App* student = command("train-student", "distill the dual-band student", skd::pipeline::cmd_train_student);
  student->add_option("--scene", o.scene, "scene manifest (overrides the config)");
  student->add_option("--alpha", o.alpha, "KL weight")->default_str(fmt::format("{}", d.alpha));
  student->add_option("--epochs", o.epochs, "training epochs")->default_str(std::to_string(d.epochs));

  CLI::App* ev = command("eval", "classify a full scene and write metrics and a map", skd::pipeline::cmd_eval);
  ev->add_option("--scene", o.scene, "scene manifest (overrides the config)");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");

  CLI::App* ablate = command("ablate", "variant ladder and alpha sweep", skd::pipeline::cmd_ablate);
  ablate->add_option("--alpha", o.alpha, "KL weight of the DGSD variant")->default_str(fmt::format("{}", d.alpha));
  ablate->add_option("--epochs", o.epochs, "training epochs per model")->default_str(std::to_string(d.epochs));

  CLI::App* render = command("render-map", "render ground truth or a checkpoint's predictions",
                             skd::pipeline::cmd_render_map);
  render->add_option("--scene", o.scene, "scene manifest (overrides the config)");
  render->add_option("--checkpoint", o.checkpoint, "checkpoint whose predictions to render");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    RunConfig cfg = o.resolve();
    if (synth->parsed() && !cfg.scene.spec && cfg.scene.manifest.empty())
      cfg.scene.spec = skd::datagen::make_complementary_spec();
    cfg.validate();
    action(cfg);
  } catch (const skd::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const skd::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const skd::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const skd::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
