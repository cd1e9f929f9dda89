#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include <json.hpp>

#include "skdnet/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "skdnet_test_cli";

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const fs::path log = kDir / "log.txt";
  const std::string cmd = std::string("\"") + SKDNET_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = skd::io::read_file(log);
  return r;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = kDir / name;
  skd::io::write_file_atomic(p, body);
  return p;
}

}  // namespace

TEST_CASE("help lists flags with defaults") {
  fs::create_directories(kDir);
  const Result top = run("--help");
  CHECK(top.code == 0);
  for (const char* c : {"synth", "train-teacher", "train-student", "eval", "ablate", "render-map"})
    CHECK_MESSAGE(top.out.find(c) != std::string::npos, c);
  const Result teacher = run("train-teacher --help");
  CHECK(teacher.code == 0);
  for (const char* f : {"--config", "--seed", "--threads", "--out", "--band", "--epochs"})
    CHECK_MESSAGE(teacher.out.find(f) != std::string::npos, f);
  CHECK(teacher.out.find("[30]") != std::string::npos);
  CHECK(run("train-student --help").out.find("[0.7]") != std::string::npos);
}

TEST_CASE("usage and configuration errors exit with 2") {
  fs::create_directories(kDir);
  CHECK(run("").code == 2);
  CHECK(run("train-teacher --bogus").code == 2);
  CHECK(run("train-teacher --config /nonexistent/run.json").code == 2);
  const fs::path bad = write_config("bad.json", R"({"epochs": 3, "learning_rate": 1})");
  const Result r = run("train-teacher --config " + bad.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("learning_rate") != std::string::npos);
  CHECK(run("train-teacher --band 3 --out " + (kDir / "x").string()).code == 2);
  CHECK(run("eval --checkpoint " + (kDir / "missing.skd").string()).code == 2);
}

TEST_CASE("divergent training exits with 3") {
  fs::create_directories(kDir);
  const fs::path cfg = write_config("diverge.json", R"({
    "scene_spec": {"preset": "complementary", "size": 32},
    "window": 6, "patch": 3, "dim": 8, "depth": 1, "conv_channels": [4, 4, 4],
    "epochs": 5, "train_per_class": 10, "lr": 1e30, "use_sdsr": false
  })");
  const Result r = run("train-teacher --config " + cfg.string() + " --out " + (kDir / "div").string());
  CHECK(r.code == 3);
  CHECK(r.out.find("numerical failure") != std::string::npos);
}

TEST_CASE("synth, untrained teacher and eval") {
  fs::create_directories(kDir);
  const fs::path scene = kDir / "scene", run_dir = kDir / "run";
  fs::remove_all(scene);
  fs::remove_all(run_dir);
  const fs::path synth_cfg = write_config("synth.json", R"({"scene_spec": {"preset": "separable", "size": 32}})");
  REQUIRE(run("synth --config " + synth_cfg.string() + " --out " + scene.string()).code == 0);
  CHECK(fs::exists(scene / "manifest.json"));
  CHECK(fs::exists(scene / "spec.json"));

  const fs::path cfg = write_config("tiny.json", R"({
    "window": 6, "patch": 3, "dim": 8, "depth": 1, "conv_channels": [4, 4, 4], "train_per_class": 10
  })");
  const std::string common = " --config " + cfg.string() + " --scene " + (scene / "manifest.json").string() +
                             " --out " + run_dir.string();
  REQUIRE(run("train-teacher --epochs 0" + common).code == 0);
  const Result ev = run("eval --checkpoint " + (run_dir / "teacher_band1.skd").string() + common);
  REQUIRE(ev.code == 0);
  const auto metrics = nlohmann::json::parse(skd::io::read_file(run_dir / "teacher_band1_metrics.json"));
  const double oa = metrics["OA"];
  MESSAGE("untrained OA " << oa);
  CHECK(std::abs(oa - 1.0 / 3.0) <= 0.1);
  CHECK(fs::exists(run_dir / "teacher_band1_map.ppm"));

  REQUIRE(run("render-map" + common).code == 0);
  CHECK(fs::exists(run_dir / "ground_truth.ppm"));
}
