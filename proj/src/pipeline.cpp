#include "skdnet/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/rng.hpp"
#include "skdnet/sdsr.hpp"

namespace skd::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSplitTag = 0x5917;
constexpr std::uint64_t kHoldoutPickTag = 0x5918;

const std::set<std::string> kConfigKeys = {
    "scene",     "scene_spec", "out",        "window",     "patch",    "dim",          "depth",
    "mlp_ratio", "conv_channels", "alpha",   "epochs",     "batch_size", "looks",      "seed",
    "threads",   "lr",         "lr_gamma",   "lr_step_epochs", "use_sdsr", "train_per_class", "holdout_max",
    "split", "train_fraction", "band",      "teacher1",   "teacher2",   "checkpoint", "datasets", "seeds",        "variants",
    "alphas"};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

datagen::SceneSpec parse_spec(const json& j) {
  if (!j.is_object()) throw ConfigError("scene_spec must be an object");
  if (!j.contains("preset")) return datagen::spec_from_json(j);
  const std::string preset = j.at("preset").get<std::string>();
  const int size = j.value("size", 64);
  if (preset == "complementary")
    return datagen::make_complementary_spec(size, j.value("impurity", 0.1), j.value("seed", std::uint64_t{2024}));
  if (preset == "separable")
    return datagen::make_separable_spec(size, j.value("num_classes", 3), j.value("impurity", 0.2),
                                        j.value("seed", std::uint64_t{7}));
  throw ConfigError(fmt::format("unknown scene preset '{}' (expected complementary or separable)", preset));
}

SceneSource parse_source(const json& j, const fs::path& base, std::string name) {
  SceneSource s;
  s.name = j.value("name", std::move(name));
  if (j.contains("scene") && j.contains("scene_spec")) throw ConfigError("give either scene or scene_spec, not both");
  if (j.contains("scene")) s.manifest = resolve(base, j.at("scene").get<std::string>());
  if (j.contains("scene_spec")) s.spec = parse_spec(j.at("scene_spec"));
  return s;
}

template <typename T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

nn::ModelConfig model_for(const Dataset& data, const RunConfig& cfg, int in_channels) {
  nn::ModelConfig mc = cfg.model;
  mc.num_classes = data.scene.num_classes();
  mc.in_channels = in_channels;
  return mc;
}

ordered_json base_meta(const Dataset& data) {
  ordered_json m;
  m["split"] = data.split;
  m["train_centers"] = data.train_centers;
  return m;
}

void check_teacher_split(const nn::Checkpoint& t, const Dataset& data, const char* which) {
  if (!t.meta.contains("split") || json(t.meta.at("split")) != json(data.split))
    throw ValidationError(fmt::format("{} was trained on a different split (seed / train_per_class / window)", which));
}

std::string pct(double v) { return fmt::format("{:.4f}", 100.0 * v); }

}  // namespace

io::Scene SceneSource::load() const {
  if (spec) return datagen::generate_scene(*spec).scene;
  if (manifest.empty()) throw ConfigError(fmt::format("dataset '{}' has neither scene nor scene_spec", name));
  return io::read_scene(manifest);
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kConfigKeys.contains(key)) throw ConfigError(fmt::format("unknown config field '{}'", key));
  RunConfig c;
  try {
    c.scene = parse_source(j, base, "scene");
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("scene: {}", e.what()));
  }
  if (j.contains("out")) c.out = resolve(base, get<std::string>(j, "out", ""));
  c.model.window = get(j, "window", c.model.window);
  c.model.patch = get(j, "patch", c.model.patch);
  c.model.dim = get(j, "dim", c.model.dim);
  c.model.depth = get(j, "depth", c.model.depth);
  c.model.mlp_ratio = get(j, "mlp_ratio", c.model.mlp_ratio);
  c.model.conv_channels = get(j, "conv_channels", c.model.conv_channels);
  c.alpha = get(j, "alpha", c.alpha);
  c.epochs = get(j, "epochs", c.epochs);
  c.batch_size = get(j, "batch_size", c.batch_size);
  c.looks = get(j, "looks", c.looks);
  c.seed = get(j, "seed", c.seed);
  c.threads = get(j, "threads", c.threads);
  c.lr = get(j, "lr", c.lr);
  c.lr_gamma = get(j, "lr_gamma", c.lr_gamma);
  c.lr_step_epochs = get(j, "lr_step_epochs", c.lr_step_epochs);
  c.use_sdsr = get(j, "use_sdsr", c.use_sdsr);
  c.train_per_class = get(j, "train_per_class", c.train_per_class);
  c.split = get(j, "split", c.split);
  c.train_fraction = get(j, "train_fraction", c.train_fraction);
  c.holdout_max = get(j, "holdout_max", c.holdout_max);
  c.band = get(j, "band", c.band);
  if (j.contains("teacher1")) c.teacher1 = resolve(base, get<std::string>(j, "teacher1", ""));
  if (j.contains("teacher2")) c.teacher2 = resolve(base, get<std::string>(j, "teacher2", ""));
  if (j.contains("checkpoint")) c.checkpoint = resolve(base, get<std::string>(j, "checkpoint", ""));
  if (j.contains("datasets")) {
    const json& ds = j.at("datasets");
    if (!ds.is_array()) throw ConfigError("datasets must be an array");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      try {
        c.datasets.push_back(parse_source(ds[i], base, fmt::format("dataset{}", i + 1)));
      } catch (const json::exception& e) {
        throw ConfigError(fmt::format("datasets[{}]: {}", i, e.what()));
      }
    }
  }
  c.seeds = get(j, "seeds", c.seeds);
  c.variants = get(j, "variants", c.variants);
  c.alphas = get(j, "alphas", c.alphas);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  nn::ModelConfig mc = model;
  mc.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError(fmt::format("alpha {} outside [0, 1]", alpha));
  train_config(use_sdsr).validate();
  if (train_per_class < 1) throw ConfigError("train_per_class must be >= 1");
  if (holdout_max < 0) throw ConfigError("holdout_max must be >= 0");
  if (split != "spatial" && split != "random")
    throw ConfigError(fmt::format("split must be 'spatial' or 'random', got '{}'", split));
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError(fmt::format("train_fraction {} outside (0, 1)", train_fraction));
  if (band != 1 && band != 2) throw ConfigError(fmt::format("band must be 1 or 2, got {}", band));
  for (const auto& v : variants)
    if (std::find(kVariants.begin(), kVariants.end(), v) == kVariants.end())
      throw ConfigError(fmt::format("unknown ablation variant '{}'", v));
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError(fmt::format("alpha {} outside [0, 1]", a));
  const auto exists = [](const fs::path& p, const char* what) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError(fmt::format("{} '{}' does not exist", what, p.string()));
  };
  exists(scene.manifest, "scene");
  exists(teacher1, "teacher1");
  exists(teacher2, "teacher2");
  exists(checkpoint, "checkpoint");
  for (const auto& d : datasets) exists(d.manifest, "dataset scene");
  if (scene.spec) scene.spec->validate();
  for (const auto& d : datasets)
    if (d.spec) d.spec->validate();
}

dgsd::TrainConfig RunConfig::train_config(bool sdsr) const {
  dgsd::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  t.schedule = {lr, lr_gamma, lr_step_epochs};
  t.use_sdsr = sdsr;
  t.looks = looks;
  t.threads = threads;
  return t;
}

Dataset prepare_dataset(io::Scene scene, const RunConfig& cfg) {
  Dataset d;
  d.window = cfg.model.window;
  const int H = scene.manifest.height, W = scene.manifest.width, s = d.window;
  std::vector<std::vector<Sample>> all;
  for (const auto& band : scene.bands) all.push_back(extract_samples(band, s, 1, ExtractMode::training));
  const std::size_t n = all.front().size();
  if (n == 0) throw ValidationError("scene has no labeled window centers");

  const bool spatial = cfg.split == "spatial";
  const int train_cols = spatial ? static_cast<int>(W * cfg.train_fraction) : W;
  if (spatial && (train_cols < s || W - train_cols < s))
    throw ConfigError(fmt::format("spatial split of a {}-column scene leaves no room for {}-pixel windows", W, s));
  std::map<int, std::vector<std::size_t>> by_class;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    const Origin o = all.front()[i].origin;
    if (!spatial || o.col + s <= train_cols) by_class[all.front()[i].label].push_back(i);
    if (spatial && o.col >= train_cols) pool.push_back(i);
  }
  std::vector<std::size_t> train_idx;
  for (auto& [label, idx] : by_class) {
    CounterRng rng(split_seed(cfg.seed, kSplitTag), static_cast<std::uint64_t>(label));
    const std::size_t k = std::min(idx.size(), static_cast<std::size_t>(cfg.train_per_class));
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    if (!spatial) pool.insert(pool.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(pool.begin(), pool.end());
  if (cfg.holdout_max > 0 && pool.size() > static_cast<std::size_t>(cfg.holdout_max)) {
    CounterRng rng(split_seed(cfg.seed, kHoldoutPickTag));
    const std::size_t k = static_cast<std::size_t>(cfg.holdout_max);
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
  }

  d.train.resize(all.size());
  d.holdout.resize(all.size());
  for (std::size_t b = 0; b < all.size(); ++b) {
    for (std::size_t i : train_idx) d.train[b].push_back(all[b][i]);
    for (std::size_t i : pool) d.holdout[b].push_back(all[b][i]);
  }
  for (const auto& smp : d.train.front()) {
    const Origin c = window_center(smp.origin, s);
    d.train_centers.push_back(static_cast<std::int64_t>(c.row) * W + c.col);
  }
  d.split["mode"] = cfg.split;
  d.split["seed"] = cfg.seed;
  d.split["train_per_class"] = cfg.train_per_class;
  d.split["window"] = s;
  d.split["height"] = H;
  d.split["width"] = W;
  // First column whose centered (clamped) window avoids the training area.
  d.split["eval_min_col"] = spatial ? train_cols + s / 2 : 0;
  d.scene = std::move(scene);
  return d;
}

dgsd::TrainResult run_teacher(const Dataset& data, int band, const RunConfig& cfg, bool use_sdsr) {
  if (band < 1 || band > static_cast<int>(data.train.size()))
    throw ConfigError(fmt::format("band {} not present (scene has {})", band, data.train.size()));
  ordered_json meta = base_meta(data);
  meta["band"] = band;
  meta["band_tag"] = data.scene.bands[static_cast<std::size_t>(band - 1)].band_tag;
  const auto b = static_cast<std::size_t>(band - 1);
  return dgsd::train_teacher(data.train[b], data.holdout[b], model_for(data, cfg, kFeatureDim),
                             cfg.train_config(use_sdsr), meta);
}

dgsd::StudentResult run_student(const Dataset& data, const nn::Checkpoint* teacher1, const nn::Checkpoint* teacher2,
                                double alpha, const RunConfig& cfg) {
  if (data.train.size() != 2) throw ConfigError(fmt::format("student needs 2 bands, scene has {}", data.train.size()));
  if (teacher1) check_teacher_split(*teacher1, data, "teacher1");
  if (teacher2) check_teacher_split(*teacher2, data, "teacher2");
  ordered_json meta = base_meta(data);
  meta["band"] = "dual";
  dgsd::DistillConfig dc{alpha, cfg.train_config(cfg.use_sdsr)};
  return dgsd::train_student(data.train[0], data.train[1], data.holdout[0], data.holdout[1], teacher1, teacher2,
                             model_for(data, cfg, 2 * kFeatureDim), dc, meta);
}

SceneEvaluation evaluate(const nn::Checkpoint& ckpt, const io::Scene& scene, int threads) {
  const auto& mc = ckpt.model.config();
  const json& meta = ckpt.meta;
  std::vector<const PolsarRaster*> bands;
  const json band = meta.value("band", json(1));
  if (band.is_string() && band.get<std::string>() == "dual") {
    if (scene.bands.size() < 2) throw ValidationError("dual-band checkpoint needs a two-band scene");
    bands = {&scene.bands[0], &scene.bands[1]};
  } else {
    const int b = band.get<int>();
    if (b < 1 || b > static_cast<int>(scene.bands.size()))
      throw ValidationError(fmt::format("checkpoint band {} not present in scene", b));
    bands = {&scene.bands[static_cast<std::size_t>(b - 1)]};
  }
  if (static_cast<int>(bands.size()) * kFeatureDim != mc.in_channels)
    throw ValidationError("checkpoint channel count does not match the scene bands");
  if (mc.num_classes != scene.num_classes())
    throw ValidationError(fmt::format("checkpoint has {} classes, scene has {}", mc.num_classes, scene.num_classes()));
  const json train = meta.value("train", json::object());
  const bool use_sdsr = train.value("use_sdsr", true);
  const int looks = train.value("looks", 4);

  const int H = scene.manifest.height, W = scene.manifest.width, s = mc.window;
  if (s > H || s > W) throw ValidationError(fmt::format("window {} larger than the {}x{} scene", s, H, W));
  const int oh = H - s + 1, ow = W - s + 1;
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) samples.push_back(make_sample(bands, {r, c}, s));
  const auto outs = sdsr::predict(ckpt.model, ckpt.stats, samples, use_sdsr, looks, threads);

  SceneEvaluation e;
  e.predictions.resize(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const int orow = std::clamp(r - s / 2, 0, oh - 1), ocol = std::clamp(c - s / 2, 0, ow - 1);
      e.predictions[static_cast<std::size_t>(r) * W + c] =
          static_cast<std::uint8_t>(outs[static_cast<std::size_t>(orow) * ow + ocol].cls_argmax());
    }
  std::vector<std::uint8_t> labels = scene.labels();
  const int min_col = meta.value("split", json::object()).value("eval_min_col", 0);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < std::min(min_col, W); ++c) labels[static_cast<std::size_t>(r) * W + c] = kUnlabeled;
  for (const auto& idx : meta.value("train_centers", json::array())) {
    const auto i = idx.get<std::int64_t>();
    if (i >= 0 && i < static_cast<std::int64_t>(labels.size())) labels[static_cast<std::size_t>(i)] = kUnlabeled;
  }
  e.confusion = eval::accumulate(e.predictions, labels, mc.num_classes);
  e.metrics = eval::oa_aa_kappa(e.confusion);
  return e;
}

StagedOutput::StagedOutput(fs::path out_dir)
    : out_(std::move(out_dir)), staging_(out_ / fmt::format(".staging-{}", ::getpid())) {
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

StagedOutput::~StagedOutput() {
  std::error_code ec;
  if (!committed_) fs::remove_all(staging_, ec);
}

void StagedOutput::write(const std::string& name, const std::string& bytes) {
  io::write_file_atomic(staging_ / name, bytes);
  files_.push_back(name);
}

void StagedOutput::adopt(const std::string& name) {
  if (!fs::is_regular_file(staging_ / name)) throw ValidationError(fmt::format("staged file '{}' missing", name));
  files_.push_back(name);
}

void StagedOutput::commit() {
  for (const auto& f : files_) fs::rename(staging_ / f, out_ / f);
  fs::remove_all(staging_);
  committed_ = true;
}

void cmd_synth(const RunConfig& cfg) {
  if (!cfg.scene.spec) throw ConfigError("synth needs a scene_spec in the config");
  const auto synthetic = datagen::generate_scene(*cfg.scene.spec);
  StagedOutput out(cfg.out);
  const io::SceneManifest m = io::write_scene(out.path(""), synthetic.scene);
  for (const auto& f : m.band_files) out.adopt(f);
  out.adopt(m.label_file);
  out.adopt("manifest.json");
  out.write("spec.json", datagen::to_json(*cfg.scene.spec).dump(2) + "\n");
  out.commit();
  std::cout << fmt::format("wrote {}x{} scene with {} bands to {}\n", cfg.scene.spec->height, cfg.scene.spec->width,
                           synthetic.scene.bands.size(), cfg.out.string());
}

void cmd_train_teacher(const RunConfig& cfg) {
  const Dataset data = prepare_dataset(cfg.scene.load(), cfg);
  StagedOutput out(cfg.out);
  const auto r = run_teacher(data, cfg.band, cfg, cfg.use_sdsr);
  const std::string stem = fmt::format("teacher_band{}", cfg.band);
  out.write(stem + ".skd", nn::encode_checkpoint(r.checkpoint));
  out.write(stem + "_metrics.csv", dgsd::metrics_csv(r.curve));
  out.commit();
  if (!r.curve.empty())
    std::cout << fmt::format("{}: final loss {:.5f}, holdout OA {:.4f}\n", stem, r.curve.back().loss, r.curve.back().oa);
}

void cmd_train_student(const RunConfig& cfg) {
  const Dataset data = prepare_dataset(cfg.scene.load(), cfg);
  const fs::path p1 = cfg.teacher1.empty() ? cfg.out / "teacher_band1.skd" : cfg.teacher1;
  const fs::path p2 = cfg.teacher2.empty() ? cfg.out / "teacher_band2.skd" : cfg.teacher2;
  std::optional<nn::Checkpoint> t1, t2;
  if (cfg.alpha > 0.0) {
    for (const auto& p : {p1, p2})
      if (!fs::exists(p)) throw ConfigError(fmt::format("teacher checkpoint '{}' does not exist", p.string()));
    t1 = nn::load_checkpoint(p1);
    t2 = nn::load_checkpoint(p2);
  }
  StagedOutput out(cfg.out);
  const auto r = run_student(data, t1 ? &*t1 : nullptr, t2 ? &*t2 : nullptr, cfg.alpha, cfg);
  out.write("student.skd", nn::encode_checkpoint(r.checkpoint));
  out.write("student_metrics.csv", dgsd::metrics_csv(r.curve));
  out.write("gate_histogram.csv", r.gates.to_csv());
  out.commit();
  if (!r.curve.empty())
    std::cout << fmt::format("student: final loss {:.5f}, holdout OA {:.4f}\n", r.curve.back().loss, r.curve.back().oa);
}

void cmd_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs a checkpoint");
  const nn::Checkpoint ckpt = nn::load_checkpoint(cfg.checkpoint);
  const io::Scene scene = cfg.scene.load();
  const SceneEvaluation e = evaluate(ckpt, scene, cfg.threads);
  const std::string stem = cfg.checkpoint.stem().string();
  StagedOutput out(cfg.out);
  out.write(stem + "_metrics.json", eval::metrics_json(e.metrics, e.confusion).dump(2) + "\n");
  out.write(stem + "_map.ppm", eval::render_ppm(e.predictions, scene.manifest.height, scene.manifest.width,
                                                scene.manifest.palette, scene.num_classes()));
  out.commit();
  std::cout << fmt::format("{}: OA {:.4f} AA {:.4f} kappa {}\n", stem, e.metrics.oa, e.metrics.aa,
                           e.metrics.kappa ? fmt::format("{:.4f}", *e.metrics.kappa) : std::string("undefined"));
}

void cmd_render_map(const RunConfig& cfg) {
  const io::Scene scene = cfg.scene.load();
  std::vector<std::uint8_t> classes = scene.labels();
  std::string name = "ground_truth.ppm";
  if (!cfg.checkpoint.empty()) {
    classes = evaluate(nn::load_checkpoint(cfg.checkpoint), scene, cfg.threads).predictions;
    name = cfg.checkpoint.stem().string() + "_map.ppm";
  }
  StagedOutput out(cfg.out);
  out.write(name, eval::render_ppm(classes, scene.manifest.height, scene.manifest.width, scene.manifest.palette,
                                   scene.num_classes()));
  out.commit();
}

AblationReport run_ablation(const RunConfig& cfg) {
  std::vector<SceneSource> datasets = cfg.datasets;
  if (datasets.empty()) datasets.push_back(cfg.scene);
  const std::vector<std::uint64_t> seeds = cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.seeds;
  const auto wants = [&](const std::string& v) {
    return std::find(cfg.variants.begin(), cfg.variants.end(), v) != cfg.variants.end();
  };

  AblationReport rep;
  const auto record = [&](const std::string& ds, const std::string& variant, const std::string& band,
                          std::uint64_t seed, std::optional<double> alpha, const SceneEvaluation& e) {
    rep.runs.push_back({ds, variant, band, seed, alpha, e.metrics.oa, e.metrics.aa, e.metrics.kappa.value_or(0.0)});
    std::cerr << fmt::format("[ablate] {} seed={} {} band={}{} OA={:.4f}\n", ds, seed, variant, band,
                             alpha ? fmt::format(" alpha={:.2f}", *alpha) : std::string(), e.metrics.oa);
  };

  for (std::size_t di = 0; di < datasets.size(); ++di) {
    const auto& ds = datasets[di];
    const io::Scene scene = ds.load();
    if (scene.bands.size() != 2) throw ConfigError(fmt::format("dataset '{}' must have 2 bands", ds.name));
    const bool sweep = di == 0 && !cfg.alphas.empty();
    for (std::uint64_t seed : seeds) {
      RunConfig c = cfg;
      c.seed = seed;
      const Dataset data = prepare_dataset(scene, c);
      if (wants("baseline"))
        for (int b = 1; b <= 2; ++b)
          record(ds.name, "baseline", std::to_string(b), seed, std::nullopt,
                 evaluate(run_teacher(data, b, c, false).checkpoint, scene, c.threads));
      std::optional<nn::Checkpoint> t1, t2;
      if (wants("baseline+SDSR") || wants("baseline+SDSR+DGSD") || sweep) {
        t1 = run_teacher(data, 1, c, true).checkpoint;
        t2 = run_teacher(data, 2, c, true).checkpoint;
        if (wants("baseline+SDSR")) {
          record(ds.name, "baseline+SDSR", "1", seed, std::nullopt, evaluate(*t1, scene, c.threads));
          record(ds.name, "baseline+SDSR", "2", seed, std::nullopt, evaluate(*t2, scene, c.threads));
        }
      }
      // Students are deterministic in (data, alpha), so each alpha trains once.
      std::map<double, SceneEvaluation> students;
      const auto student = [&](double alpha) -> const SceneEvaluation& {
        auto it = students.find(alpha);
        if (it == students.end()) {
          const auto r = run_student(data, alpha > 0 ? &*t1 : nullptr, alpha > 0 ? &*t2 : nullptr, alpha, c);
          it = students.emplace(alpha, evaluate(r.checkpoint, scene, c.threads)).first;
        }
        return it->second;
      };
      if (wants("baseline+SDSR+cat")) record(ds.name, "baseline+SDSR+cat", "dual", seed, 0.0, student(0.0));
      if (wants("baseline+SDSR+DGSD"))
        record(ds.name, "baseline+SDSR+DGSD", "dual", seed, cfg.alpha, student(cfg.alpha));
      if (sweep)
        for (double a : cfg.alphas) record(ds.name, "alpha-sweep", "dual", seed, a, student(a));
    }
  }

  struct Acc {
    double oa = 0, aa = 0, kappa = 0;
    int n = 0;
  };
  const auto mean_of = [&](const std::string& ds, const std::string& variant, const std::string& band,
                           std::optional<double> alpha) -> std::optional<Acc> {
    Acc a;
    for (const auto& r : rep.runs) {
      if (r.dataset != ds || r.variant != variant || r.band != band) continue;
      if (alpha && (!r.alpha || *r.alpha != *alpha)) continue;
      a.oa += r.oa;
      a.aa += r.aa;
      a.kappa += r.kappa;
      ++a.n;
    }
    if (a.n == 0) return std::nullopt;
    return Acc{a.oa / a.n, a.aa / a.n, a.kappa / a.n, a.n};
  };
  const auto cells = [&](const std::optional<Acc>& a) {
    return a ? fmt::format("{},{},{}", pct(a->oa), pct(a->aa), pct(a->kappa)) : std::string(",,");
  };

  std::string table =
      "section,dataset,variant,alpha,band1_OA,band1_AA,band1_kappa,band2_OA,band2_AA,band2_kappa,dual_OA,dual_AA,"
      "dual_kappa,seeds\n";
  for (const auto& ds : datasets)
    for (const auto& v : kVariants) {
      if (!wants(v)) continue;
      const bool dual = v == "baseline+SDSR+cat" || v == "baseline+SDSR+DGSD";
      const std::optional<double> alpha =
          v == "baseline+SDSR+cat" ? std::optional<double>(0.0) : (dual ? std::optional<double>(cfg.alpha) : std::nullopt);
      const auto b1 = dual ? std::nullopt : mean_of(ds.name, v, "1", std::nullopt);
      const auto b2 = dual ? std::nullopt : mean_of(ds.name, v, "2", std::nullopt);
      const auto du = dual ? mean_of(ds.name, v, "dual", alpha) : std::nullopt;
      table += fmt::format("ladder,{},{},{},{},{},{},{}\n", ds.name, v, alpha ? fmt::format("{:.2f}", *alpha) : "",
                           cells(b1), cells(b2), cells(du), seeds.size());
    }
  if (!cfg.alphas.empty())
    for (double a : cfg.alphas)
      table += fmt::format("alpha,{},baseline+SDSR+DGSD,{:.2f},,,,,,,{},{}\n", datasets.front().name, a,
                           cells(mean_of(datasets.front().name, "alpha-sweep", "dual", a)), seeds.size());
  rep.table_csv = std::move(table);

  rep.runs_csv = "dataset,variant,band,seed,alpha,OA,AA,kappa\n";
  for (const auto& r : rep.runs)
    rep.runs_csv += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f}\n", r.dataset, r.variant, r.band, r.seed,
                                r.alpha ? fmt::format("{:.2f}", *r.alpha) : "", r.oa, r.aa, r.kappa);

  ordered_json summary = ordered_json::object();
  if (wants("baseline") && wants("baseline+SDSR")) {
    for (const auto& ds : datasets) {
      ordered_json d;
      std::vector<double> all;
      for (const std::string band : {"1", "2"}) {
        ordered_json per_seed = ordered_json::array();
        std::vector<double> diffs;
        for (std::uint64_t seed : seeds) {
          double base = 0, with = 0;
          for (const auto& r : rep.runs) {
            if (r.dataset != ds.name || r.band != band || r.seed != seed) continue;
            if (r.variant == "baseline") base = r.oa;
            if (r.variant == "baseline+SDSR") with = r.oa;
          }
          diffs.push_back(with - base);
          per_seed.push_back({{"seed", seed}, {"baseline_OA", base}, {"sdsr_OA", with}, {"improvement", with - base}});
        }
        all.insert(all.end(), diffs.begin(), diffs.end());
        d["band" + band] = {{"runs", per_seed},
                            {"mean_improvement", std::accumulate(diffs.begin(), diffs.end(), 0.0) / diffs.size()}};
      }
      d["mean_improvement"] = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
      summary[ds.name] = d;
    }
  }
  rep.summary = std::move(summary);
  return rep;
}

void cmd_ablate(const RunConfig& cfg) {
  StagedOutput out(cfg.out);
  const AblationReport rep = run_ablation(cfg);
  out.write("ablation.csv", rep.table_csv);
  out.write("ablation_runs.csv", rep.runs_csv);
  out.write("ablation_summary.json", rep.summary.dump(2) + "\n");
  out.commit();
  std::cout << rep.table_csv;
}

}  // namespace skd::pipeline
