// hvsmark: data generation, training, extraction and the evaluation
// protocols behind one command.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "hvsmark/errors.hpp"
#include "hvsmark/evaluation.hpp"
#include "hvsmark/hashing.hpp"
#include "hvsmark/image_io.hpp"
#include "hvsmark/training.hpp"
#include "hvsmark/watermark.hpp"

#ifndef HVSMARK_VERSION
#define HVSMARK_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hvsmark;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kSchemaVersion = 1;

struct UsageError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration: defaults <- config file <- flags

json default_config() {
  return {{"schema_version", kSchemaVersion},
          {"framework", "hvs-rgb"},
          {"alpha", 1.0},
          {"beta", 0.5},
          {"structural", "both"},
          {"target_scale", 0.9},
          {"lr", 2e-4},
          {"batch_size", 4},
          {"phase1_epochs", 20},
          {"phase2_epochs", 40},
          {"robust", false},
          {"sigma_max", 0.5},
          {"seed", 0},
          {"image_size", 64},
          {"extractor_widths", ExtractorSpec{}.hidden_widths},
          {"generator_depth", 3},
          {"generator_base_width", 32},
          {"discriminator", false},
          {"patch_field", 70},
          {"wz_seed", 1234},
          {"w1_text", "ACM"},
          {"w2_text", "IEEE"},
          {"w1_image", nullptr},
          {"w2_image", nullptr},
          {"threads", 0}};
}

json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path);
  json file;
  try {
    file = json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!file.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  if (!file.contains("schema_version") || file["schema_version"] != kSchemaVersion) {
    throw ConfigError("config " + path + " must declare schema_version " + std::to_string(kSchemaVersion));
  }
  json merged = default_config();
  for (auto& [key, value] : file.items()) {
    if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "' in " + path);
    merged[key] = value;
  }
  return merged;
}

TrainConfig train_config_from(const json& c) {
  try {
    TrainConfig cfg;
    cfg.loss.framework = framework_from_string(c.at("framework").get<std::string>());
    cfg.loss.alpha = c.at("alpha").get<double>();
    cfg.loss.beta = c.at("beta").get<double>();
    cfg.loss.structural = structural_from_string(c.at("structural").get<std::string>());
    cfg.loss.target_scale = c.at("target_scale").get<double>();
    cfg.lr = c.at("lr").get<double>();
    cfg.batch_size = c.at("batch_size").get<int64_t>();
    cfg.phase1_epochs = c.at("phase1_epochs").get<int64_t>();
    cfg.phase2_epochs = c.at("phase2_epochs").get<int64_t>();
    cfg.robust = c.at("robust").get<bool>();
    cfg.sigma_max = c.at("sigma_max").get<double>();
    cfg.seed = c.at("seed").get<uint64_t>();
    cfg.image_size = c.at("image_size").get<int64_t>();
    cfg.extractor.hidden_widths = c.at("extractor_widths").get<std::vector<int64_t>>();
    cfg.generator.depth = c.at("generator_depth").get<int64_t>();
    cfg.generator.base_width = c.at("generator_base_width").get<int64_t>();
    cfg.discriminator.enabled = c.at("discriminator").get<bool>();
    cfg.discriminator.patch_field = c.at("patch_field").get<int64_t>();
    cfg.finalize();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

WatermarkSet watermarks_from(const json& c, int64_t size) {
  auto logo = [&](const char* image_key, const char* text_key) {
    if (!c.at(image_key).is_null()) {
      return logo_from_image(load_png(c.at(image_key).get<std::string>()), size, size);
    }
    return generate_logo(c.at(text_key).get<std::string>(), size, size);
  };
  const auto seed = c.at("wz_seed").get<uint64_t>();
  WatermarkSet wm{logo("w1_image", "w1_text"), logo("w2_image", "w2_text"), generate_wz(seed, size, size), seed,
                  {}, {}, {}};
  refresh_hashes(wm);
  return wm;
}

// Flags that override config keys; each is applied only when given.
struct Overrides {
  std::string config_path;
  std::string framework, structural;
  double alpha = 0, beta = 0, lr = 0, sigma_max = 0, target_scale = 0;
  int64_t batch_size = 0, phase1 = 0, phase2 = 0, image_size = 0, threads = 0;
  uint64_t seed = 0, wz_seed = 0;
  bool robust = false, discriminator = false;
  std::vector<std::pair<std::string, CLI::Option*>> applied;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (schema_version 1)")->check(CLI::ExistingFile);
    reg("framework", app->add_option("--framework", framework, "hvs-rgb | hvs-yuv | direct"));
    reg("structural", app->add_option("--structural", structural, "none | ssim_only | msssim_only | both"));
    reg("alpha", app->add_option("--alpha", alpha, "weight of the payload extraction terms"));
    reg("beta", app->add_option("--beta", beta, "weight of the null-response terms"));
    reg("lr", app->add_option("--lr", lr, "Adam learning rate"));
    reg("sigma_max", app->add_option("--sigma-max", sigma_max, "upper bound of the training noise sigma"));
    reg("target_scale", app->add_option("--target-scale", target_scale, "extraction target scale in (0, 1]"));
    reg("batch_size", app->add_option("--batch-size", batch_size, "minibatch size"));
    reg("phase1_epochs", app->add_option("--phase1-epochs", phase1, "epochs of phase 1"));
    reg("phase2_epochs", app->add_option("--phase2-epochs", phase2, "epochs of phase 2"));
    reg("image_size", app->add_option("--image-size", image_size, "square image side"));
    reg("threads", app->add_option("--threads", threads, "intra-op threads (0 = library default)"));
    reg("seed", app->add_option("--seed", seed, "training seed"));
    reg("wz_seed", app->add_option("--wz-seed", wz_seed, "seed of the null-response noise image"));
    reg("robust", app->add_flag("--robust", robust, "noise-augment E inputs during phase 2"));
    reg("discriminator", app->add_flag("--discriminator", discriminator, "enable the patch discriminator"));
  }

  void reg(const std::string& key, CLI::Option* opt) { applied.emplace_back(key, opt); }

  bool given(const std::string& key) const {
    for (const auto& [k, opt] : applied) {
      if (k == key) return opt->count() > 0;
    }
    return false;
  }

  json effective() const {
    json c = config_path.empty() ? default_config() : load_config_file(config_path);
    for (const auto& [key, opt] : applied) {
      if (opt->count() == 0) continue;
      if (key == "framework") c[key] = framework;
      else if (key == "structural") c[key] = structural;
      else if (key == "alpha") c[key] = alpha;
      else if (key == "beta") c[key] = beta;
      else if (key == "lr") c[key] = lr;
      else if (key == "sigma_max") c[key] = sigma_max;
      else if (key == "target_scale") c[key] = target_scale;
      else if (key == "batch_size") c[key] = batch_size;
      else if (key == "phase1_epochs") c[key] = phase1;
      else if (key == "phase2_epochs") c[key] = phase2;
      else if (key == "image_size") c[key] = image_size;
      else if (key == "threads") c[key] = threads;
      else if (key == "seed") c[key] = seed;
      else if (key == "wz_seed") c[key] = wz_seed;
      else if (key == "robust") c[key] = robust;
      else if (key == "discriminator") c[key] = discriminator;
    }
    return c;
  }
};

void apply_threads(const json& c) {
  const auto t = c.value("threads", 0);
  if (t > 0) torch::set_num_threads(t);
}

// ---------------------------------------------------------------------------
// Output directories and manifests

fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  const char* root = std::getenv("HVSMARK_OUTPUT_ROOT");
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  return p;
}

fs::path prepare_out(const std::string& out, bool force, bool allow_existing = false) {
  const auto p = resolve_out(out);
  if (fs::exists(p) && !fs::is_directory(p)) throw UsageError(p.string() + " exists and is not a directory");
  if (fs::exists(p) && !fs::is_empty(p) && !force && !allow_existing) {
    throw UsageError("output directory " + p.string() + " is not empty (use --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create " + p.string() + ": " + ec.message());
  return p;
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
    if (!os) throw DataError("short write on " + path.string());
  }
  fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

class Manifest {
 public:
  Manifest(fs::path dir, std::string command, json config) : dir_(std::move(dir)) {
    doc_ = {{"command", std::move(command)},
            {"config", std::move(config)},
            {"code_version", HVSMARK_VERSION},
            {"started", now_iso()},
            {"finished", nullptr},
            {"status", "running"},
            {"outputs", json::object()}};
    doc_["run_id"] = sha256_hex(doc_.dump()).substr(0, 16);
    flush();
  }

  const std::string& id() const { return doc_["run_id"].get_ref<const std::string&>(); }
  json& operator[](const std::string& key) { return doc_[key]; }

  void output(const std::string& role, const fs::path& path) {
    doc_["outputs"][role] = {{"path", fs::relative(path, dir_).string()}, {"sha256", file_sha256(path)}};
  }

  void finish() {
    doc_["finished"] = now_iso();
    doc_["status"] = "complete";
    flush();
  }

 private:
  void flush() { write_atomic(dir_ / "manifest.json", doc_.dump(2) + "\n"); }

  fs::path dir_;
  json doc_;
};

json tag_meta(json meta, const Manifest& m) {
  meta["manifest"] = "manifest.json";
  meta["run_id"] = m.id();
  return meta;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<DatasetSample> require_dataset(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!fs::is_directory(path)) throw DataError(std::string(what) + " directory " + path + " does not exist");
  return load_dataset(path);
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataArgs {
  int64_t n = 200;
  int64_t size = 64;
  uint64_t seed = 7;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.n < 1) throw UsageError("--n must be >= 1");
  const auto dir = prepare_out(a.out, a.force);
  const auto data = make_synthetic_dataset(a.n, a.size, a.seed);
  save_dataset(data, dir, {{"generator", "synthetic-shapes"}, {"seed", a.seed}});
  std::cout << "wrote " << data.size() << " pairs to " << dir.string() << " (hash " << dataset_hash(data)
            << ")\n";
  return kExitOk;
}

struct TrainArgs {
  Overrides ov;
  std::string data, test_data, out, resume;
  int64_t stop_after_steps = 0;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  const auto c = a.ov.effective();
  apply_threads(c);
  const auto train = require_dataset(a.data, "training data");
  const auto test = a.test_data.empty() ? std::vector<DatasetSample>{} : require_dataset(a.test_data, "test data");
  const auto dir = prepare_out(a.out, a.force, !a.resume.empty());

  // A resumed run continues under the checkpoint's own configuration; an
  // explicit framework still has to agree with it.
  TrainConfig cfg = train_config_from(c);
  std::optional<Restored> resumed;
  if (!a.resume.empty()) {
    const bool explicit_framework = !a.ov.config_path.empty() || a.ov.given("framework");
    resumed = load_checkpoint(a.resume, explicit_framework ? std::optional(cfg.loss.framework) : std::nullopt);
  }
  WatermarkSet wm = resumed ? resumed->wm : watermarks_from(c, cfg.image_size);
  TrainState st = resumed ? std::move(resumed->state) : make_state(cfg);
  cfg = st.cfg;

  Manifest manifest(dir, "train", c);
  manifest["dataset_hash"] = dataset_hash(train);
  if (!test.empty()) manifest["test_dataset_hash"] = dataset_hash(test);
  manifest["watermark_hashes"] = {{"w1", wm.w1_hash}, {"w2", wm.w2_hash}, {"wz", wm.wz_hash}};
  manifest["train_config"] = cfg;
  manifest["config_hash"] = config_hash(cfg);
  if (resumed) manifest["resumed_from"] = {{"path", a.resume}, {"global_step", st.global_step}};
  save_watermarks(wm, dir / "watermarks");

  const auto log_path = dir / "steps.csv";
  const bool append = resumed && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (!append) log << step_csv_header(cfg) << "\n";

  RunOptions opts;
  opts.stop_after_steps = a.stop_after_steps;
  int64_t budget = a.stop_after_steps;
  opts.on_step = [&](const StepRecord& r) {
    log << step_csv_row(st.cfg, r) << "\n";
    if (r.batch == 0) {
      std::cout << "phase " << r.phase << " epoch " << r.epoch << " step " << r.global_step << " loss "
                << r.loss.total << std::endl;
    }
  };

  if (st.phase == 1) {
    const auto recs = train_phase1(st, train, wm, opts);
    budget -= static_cast<int64_t>(recs.size());
    if (st.phase == 2) {
      save_checkpoint(st, wm, dir / "phase1.ckpt");
      manifest.output("phase1_checkpoint", dir / "phase1.ckpt");
    }
  }
  const bool stopped_early = a.stop_after_steps > 0 && budget <= 0;
  if (st.phase == 2 && !stopped_early) {
    opts.stop_after_steps = a.stop_after_steps > 0 ? budget : 0;
    train_phase2(st, train, wm, cfg, opts);
  }
  log.flush();
  manifest.output("step_log", log_path);

  const bool done = st.finished();
  const auto ckpt = dir / (done ? "final.ckpt" : "checkpoint.ckpt");
  save_checkpoint(st, wm, ckpt);
  manifest.output(done ? "final_checkpoint" : "checkpoint", ckpt);
  manifest["global_step"] = st.global_step;

  if (done && !test.empty()) {
    auto report = fidelity_report(st, test, wm);
    report.meta = tag_meta(report.meta, manifest);
    write_text(dir / "fidelity.csv", to_csv(report));
    write_text(dir / "fidelity.json", to_json(report).dump(2) + "\n");
    manifest.output("fidelity_csv", dir / "fidelity.csv");
    manifest.output("fidelity_json", dir / "fidelity.json");
    std::cout << "test: psnr " << report.aggregates.at("psnr").mean << " ber1 "
              << report.aggregates.at("ber1").mean << " ber2 " << report.aggregates.at("ber2").mean << "\n";
  }
  manifest.finish();
  std::cout << (done ? "training complete: " : "checkpoint written: ") << ckpt.string() << "\n";
  return kExitOk;
}

struct ExtractArgs {
  std::string checkpoint, image, out;
  double tau = kDefaultVerifyTau;
  bool force = false;
};

int cmd_extract(const ExtractArgs& a) {
  auto restored = load_checkpoint(a.checkpoint);
  auto& st = restored.state;
  const auto img = load_png(a.image);
  if (img.channels() != 3 || img.height() != st.cfg.image_size || img.width() != st.cfg.image_size) {
    throw DataError("image must be " + std::to_string(st.cfg.image_size) + "x" +
                    std::to_string(st.cfg.image_size) + " RGB for this checkpoint");
  }
  const auto dir = prepare_out(a.out, a.force);
  auto [first, second] = extract(st, img.data().unsqueeze(0));
  ImageTensor e1(first[0].to(torch::kFloat64), ValueRange::Signed);
  ImageTensor e2(second[0].to(torch::kFloat64), ValueRange::Signed);
  const auto outcome = verify(e1, e2, restored.wm, a.tau);
  save_png(e1, dir / "extracted_first.png");
  save_png(e2, dir / "extracted_second.png");
  json doc = to_json(outcome);
  doc["tau"] = a.tau;
  doc["image"] = a.image;
  doc["image_sha256"] = file_sha256(a.image);
  doc["checkpoint_sha256"] = file_sha256(a.checkpoint);
  write_text(dir / "verification.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint, data, out;
  int64_t gallery = 4;
  bool force = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  auto restored = load_checkpoint(a.checkpoint);
  const auto test = require_dataset(a.data, "test data");
  const auto dir = prepare_out(a.out, a.force);
  Manifest manifest(dir, "evaluate", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"gallery", a.gallery}});
  manifest["checkpoint_sha256"] = file_sha256(a.checkpoint);
  manifest["dataset_hash"] = dataset_hash(test);
  auto report = fidelity_report(restored.state, test, restored.wm);
  report.meta = tag_meta(report.meta, manifest);
  write_text(dir / "fidelity.csv", to_csv(report));
  write_text(dir / "fidelity.json", to_json(report).dump(2) + "\n");
  manifest.output("fidelity_csv", dir / "fidelity.csv");
  manifest.output("fidelity_json", dir / "fidelity.json");
  for (const auto& p : plot_report(report, dir)) manifest.output(p.filename().string(), p);
  if (a.gallery > 0) {
    for (const auto& p : plot_gallery(make_gallery(restored.state, test, a.gallery), dir)) {
      manifest.output(p.filename().string(), p);
    }
  }
  manifest.finish();
  for (const auto& [k, v] : report.aggregates) std::cout << k << " " << v.mean << " +- " << v.std << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string checkpoint, data, out, sigmas = "0,0.1,0.2,0.3,0.4";
  uint64_t seed = 0;
  bool force = false;
};

int cmd_sweep(const SweepArgs& a) {
  auto restored = load_checkpoint(a.checkpoint);
  const auto test = require_dataset(a.data, "test data");
  const auto sigmas = parse_list(a.sigmas);
  const auto dir = prepare_out(a.out, a.force);
  Manifest manifest(dir, "sweep", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"sigmas", sigmas},
                                   {"seed", a.seed}});
  manifest["checkpoint_sha256"] = file_sha256(a.checkpoint);
  manifest["dataset_hash"] = dataset_hash(test);
  const auto curve = robustness_sweep(restored.state, test, restored.wm, sigmas, a.seed);
  write_text(dir / "sweep.csv", to_csv(curve));
  json doc = to_json(curve);
  doc["meta"] = tag_meta(json::object(), manifest);
  write_text(dir / "sweep.json", doc.dump(2) + "\n");
  manifest.output("sweep_csv", dir / "sweep.csv");
  manifest.output("sweep_json", dir / "sweep.json");
  for (const auto& p : plot_sweep(curve, dir)) manifest.output(p.filename().string(), p);
  manifest.finish();
  std::cout << to_csv(curve);
  return kExitOk;
}

struct StudyArgs {
  Overrides ov;
  std::string data, test_data, out, channels = "R,G,B,DCT_Y,DCT_U,DCT_V", frameworks = "hvs-rgb,hvs-yuv";
  bool force = false;
};

int cmd_channel_study(const StudyArgs& a) {
  const auto c = a.ov.effective();
  apply_threads(c);
  const auto train = require_dataset(a.data, "training data");
  const auto test = require_dataset(a.test_data, "test data");
  std::vector<Channel> channels;
  for (const auto& name : split(a.channels)) {
    try {
      channels.push_back(channel_from_string(name));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const auto dir = prepare_out(a.out, a.force);
  const auto cfg = train_config_from(c);
  const auto wm = watermarks_from(c, cfg.image_size);
  Manifest manifest(dir, "channel-study", c);
  manifest["channels"] = split(a.channels);
  auto report = channel_study(train, test, wm, channels, cfg);
  report.meta = tag_meta(report.meta, manifest);
  write_text(dir / "channel_study.csv", to_csv(report));
  write_text(dir / "channel_study.json", to_json(report).dump(2) + "\n");
  manifest.output("channel_study_csv", dir / "channel_study.csv");
  manifest.output("channel_study_json", dir / "channel_study.json");
  manifest.finish();
  std::cout << to_csv(report);
  return kExitOk;
}

int cmd_ablate(const StudyArgs& a) {
  const auto c = a.ov.effective();
  apply_threads(c);
  const auto train = require_dataset(a.data, "training data");
  const auto test = require_dataset(a.test_data, "test data");
  std::vector<Framework> frameworks;
  for (const auto& name : split(a.frameworks)) {
    try {
      frameworks.push_back(framework_from_string(name));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const auto dir = prepare_out(a.out, a.force);
  const auto cfg = train_config_from(c);
  const auto wm = watermarks_from(c, cfg.image_size);
  Manifest manifest(dir, "ablate", c);
  manifest["frameworks"] = split(a.frameworks);
  auto report = ablation_study(train, test, wm, cfg, frameworks);
  report.meta = tag_meta(report.meta, manifest);
  write_text(dir / "ablation.csv", to_csv(report));
  write_text(dir / "ablation.json", to_json(report).dump(2) + "\n");
  manifest.output("ablation_csv", dir / "ablation.csv");
  manifest.output("ablation_json", dir / "ablation.json");
  manifest.finish();
  std::cout << to_csv(report);
  return kExitOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Watermarked image-to-image networks: training and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HVSMARK_VERSION);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "render a synthetic paired dataset");
  gen_cmd->add_option("--n", gen.n, "number of pairs")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "image side in pixels")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "scene seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "write into a non-empty directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "two-phase training of G and E");
  tr.ov.attach(train_cmd);
  train_cmd->add_option("--data", tr.data, "training dataset directory")->required();
  train_cmd->add_option("--test-data", tr.test_data, "held-out dataset for a final fidelity report");
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--resume", tr.resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-after-steps", tr.stop_after_steps, "write checkpoint.ckpt after N steps");
  train_cmd->add_flag("--force", tr.force, "write into a non-empty directory");

  ExtractArgs ex;
  auto* extract_cmd = app.add_subcommand("extract", "extract both watermarks from an image and verify");
  extract_cmd->add_option("--checkpoint", ex.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--image", ex.image, "RGB PNG")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--out", ex.out, "output directory")->required();
  extract_cmd->add_option("--tau", ex.tau, "BER threshold for a positive decision")->capture_default_str();
  extract_cmd->add_flag("--force", ex.force, "write into a non-empty directory");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "fidelity and BER table on a test set");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "test dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "output directory")->required();
  eval_cmd->add_option("--gallery", ev.gallery, "samples in gallery.png (0 disables)")->capture_default_str();
  eval_cmd->add_flag("--force", ev.force, "write into a non-empty directory");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "BER under additive Gaussian noise");
  sweep_cmd->add_option("--checkpoint", sw.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--data", sw.data, "test dataset directory")->required();
  sweep_cmd->add_option("--sigmas", sw.sigmas, "comma-separated, strictly increasing")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "noise seed")->capture_default_str();
  sweep_cmd->add_option("--out", sw.out, "output directory")->required();
  sweep_cmd->add_flag("--force", sw.force, "write into a non-empty directory");

  StudyArgs cs;
  auto* channel_cmd = app.add_subcommand("channel-study", "train one W1-only model per carrier channel");
  cs.ov.attach(channel_cmd);
  channel_cmd->add_option("--data", cs.data, "training dataset directory")->required();
  channel_cmd->add_option("--test-data", cs.test_data, "test dataset directory")->required();
  channel_cmd->add_option("--channels", cs.channels, "comma-separated channel tags")->capture_default_str();
  channel_cmd->add_option("--out", cs.out, "output directory")->required();
  channel_cmd->add_flag("--force", cs.force, "write into a non-empty directory");

  StudyArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "structural-loss variants from a common phase 1");
  ab.ov.attach(ablate_cmd);
  ablate_cmd->add_option("--data", ab.data, "training dataset directory")->required();
  ablate_cmd->add_option("--test-data", ab.test_data, "test dataset directory")->required();
  ablate_cmd->add_option("--frameworks", ab.frameworks, "comma-separated frameworks")->capture_default_str();
  ablate_cmd->add_option("--out", ab.out, "output directory")->required();
  ablate_cmd->add_flag("--force", ab.force, "write into a non-empty directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  // --framework on ablate narrows the framework list.
  if (*ablate_cmd && ab.ov.given("framework")) ab.frameworks = ab.ov.framework;

  if (*gen_cmd) return cmd_gen_data(gen);
  if (*train_cmd) return cmd_train(tr);
  if (*extract_cmd) return cmd_extract(ex);
  if (*eval_cmd) return cmd_evaluate(ev);
  if (*sweep_cmd) return cmd_sweep(sw);
  if (*channel_cmd) return cmd_channel_study(cs);
  if (*ablate_cmd) return cmd_ablate(ab);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
