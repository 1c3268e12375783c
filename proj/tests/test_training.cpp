#include "doctest_torch.hpp"

#include <filesystem>
#include <set>

#include "hvsmark/errors.hpp"
#include "hvsmark/training.hpp"
#include "tiny.hpp"

using namespace hvsmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hvsmark_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_params(const torch::nn::Module& a, const torch::nn::Module& b) {
  auto pa = parameter_snapshot(a);
  auto pb = parameter_snapshot(b);
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

std::vector<std::string> csv_log(const TrainConfig& cfg, const std::vector<StepRecord>& recs) {
  std::vector<std::string> out;
  for (const auto& r : recs) out.push_back(step_csv_row(cfg, r));
  return out;
}

struct Fixture {
  std::vector<DatasetSample> data = make_synthetic_dataset(8, 16, 3);
  WatermarkSet wm = make_watermark_set(16, 16, 1234);
};

}  // namespace

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  CHECK(derive_seed(0, {}) != derive_seed(0, {0}));
}

TEST_CASE("synthetic dataset") {
  auto a = make_synthetic_dataset(6, 32, 5);
  auto b = make_synthetic_dataset(6, 32, 5);
  CHECK(dataset_hash(a) == dataset_hash(b));
  CHECK(dataset_hash(a) != dataset_hash(make_synthetic_dataset(6, 32, 6)));
  CHECK((stack_inputs(a).sizes() == torch::IntArrayRef{6, 3, 32, 32}));

  std::set<std::array<int, 3>> palette;
  for (const auto& c : synthetic_palette()) palette.insert({c[0], c[1], c[2]});
  bool non_background = false;
  for (const auto& s : a) {
    auto t = (s.target.data() * 255).round().to(torch::kInt32).permute({1, 2, 0}).reshape({-1, 3});
    auto acc = t.accessor<int, 2>();
    for (int64_t i = 0; i < t.size(0); ++i) {
      std::array<int, 3> px{acc[i][0], acc[i][1], acc[i][2]};
      REQUIRE(palette.count(px) == 1);
      if (px != std::array<int, 3>{38, 38, 51}) non_background = true;
    }
    // inputs lie on the 8-bit grid
    auto scaled = s.input.data() * 255;
    CHECK((scaled - scaled.round()).abs().max().item<double>() < 1e-9);
  }
  CHECK(non_background);
  CHECK_THROWS_AS(make_synthetic_dataset(0, 32, 1), InvalidArgument);
  CHECK_THROWS_AS(make_synthetic_dataset(2, 4, 1), InvalidShape);
}

TEST_CASE("dataset save and load") {
  auto data = make_synthetic_dataset(3, 16, 9);
  auto dir = scratch("dataset");
  save_dataset(data, dir, {{"seed", 9}});
  auto back = load_dataset(dir);
  CHECK(dataset_hash(back) == dataset_hash(data));
  fs::remove(dir / "input" / "0001.png");
  CHECK_THROWS(load_dataset(dir));
  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), DataError);
}

TEST_CASE("config json roundtrip and hash") {
  auto c = tiny::config(Framework::HvsYuv);
  c.first_carrier = Channel::DCT_Y;
  c.finalize();
  nlohmann::json j = c;
  auto back = j.get<TrainConfig>();
  CHECK(config_hash(back) == config_hash(c));
  back.lr *= 2;
  CHECK(config_hash(back) != config_hash(c));
  auto bad = tiny::config();
  bad.image_size = 18;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
  auto direct = tiny::config(Framework::Direct);
  direct.first_carrier = Channel::R;
  CHECK_THROWS_AS(direct.finalize(), ConfigError);
}

TEST_CASE("batching and bit-identical reruns") {
  Fixture f;
  auto cfg = tiny::config();
  cfg.phase1_epochs = 1;
  auto a = make_state(cfg);
  auto ra = train_phase1(a, f.data, f.wm);
  CHECK(ra.size() == 2);
  CHECK(a.global_step == 2);
  CHECK(a.phase == 2);
  auto b = make_state(cfg);
  auto rb = train_phase1(b, f.data, f.wm);
  CHECK(csv_log(cfg, ra) == csv_log(cfg, rb));
  CHECK(same_params(*a.g, *b.g));
  CHECK(same_params(*a.e, *b.e));
  CHECK(epoch_order(cfg, 1, 0, 8) == epoch_order(cfg, 1, 0, 8));
  CHECK(epoch_order(cfg, 1, 0, 8) != epoch_order(cfg, 1, 1, 8));
}

TEST_CASE("training lowers the loss for most seeds") {
  auto data = make_synthetic_dataset(16, 16, 4);
  auto wm = make_watermark_set(16, 16, 1234);
  int improved = 0;
  for (uint64_t seed : {1, 2, 3}) {
    auto cfg = tiny::config();
    cfg.seed = seed;
    cfg.phase1_epochs = 6;
    auto st = make_state(cfg);
    auto recs = train_phase1(st, data, wm);
    double last = 0.0;
    for (size_t i = recs.size() - 4; i < recs.size(); ++i) last += recs[i].loss.total / 4;
    if (last < recs.front().loss.total) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("phase one and phase two terms") {
  Fixture f;
  auto st = make_state(tiny::config());
  auto x = stack_inputs(f.data).slice(0, 0, 4);
  auto y = stack_targets(f.data).slice(0, 0, 4);
  auto r1 = training_step(st, x, y, f.wm);
  CHECK(r1.loss.terms.count("L1") == 1);
  CHECK(r1.loss.terms.count("L2") == 0);
  CHECK(r1.task_image.is_same(r1.generated));
  st.phase = 2;
  auto r2 = training_step(st, x, y, f.wm);
  for (const auto& t : objective_terms(Framework::HvsRgb)) CHECK(r2.loss.terms.count(t) == 1);
  CHECK(r2.sigmas.empty());
}

TEST_CASE("beta zero makes S0 irrelevant") {
  Fixture f;
  auto cfg = tiny::config();
  cfg.loss.beta = 0.0;
  auto x = stack_inputs(f.data).slice(0, 0, 4);
  auto y = stack_targets(f.data).slice(0, 0, 4);
  auto a = make_state(cfg);
  auto b = make_state(cfg);
  a.phase = b.phase = 2;
  training_step(a, x, y, f.wm);
  training_step(b, x, y, f.wm, torch::rand_like(y));
  CHECK(same_params(*a.g, *b.g));
  CHECK(same_params(*a.e, *b.e));

  cfg.loss.beta = 0.5;
  auto c = make_state(cfg);
  auto d = make_state(cfg);
  c.phase = d.phase = 2;
  training_step(c, x, y, f.wm);
  training_step(d, x, y, f.wm, torch::rand_like(y));
  CHECK_FALSE(same_params(*c.e, *d.e));
}

TEST_CASE("robust noise levels are reproducible") {
  Fixture f;
  auto cfg = tiny::config();
  cfg.robust = true;
  cfg.sigma_max = 0.3;
  auto x = stack_inputs(f.data).slice(0, 0, 4);
  auto y = stack_targets(f.data).slice(0, 0, 4);
  auto a = make_state(cfg);
  auto b = make_state(cfg);
  a.phase = b.phase = 2;
  auto ra = training_step(a, x, y, f.wm);
  auto rb = training_step(b, x, y, f.wm);
  REQUIRE(ra.sigmas.size() == 4);
  CHECK(ra.sigmas == rb.sigmas);
  for (double s : ra.sigmas) CHECK((s >= 0.0 && s <= 0.3));
  CHECK(ra.task_image.is_same(ra.generated));
  CHECK_FALSE(ra.extractor_input.is_same(ra.generated));
  auto rc = training_step(a, x, y, f.wm);
  CHECK(rc.sigmas != ra.sigmas);
}

TEST_CASE("mid-phase resume reproduces the loss log") {
  Fixture f;
  auto cfg = tiny::config();
  auto full = make_state(cfg);
  auto log_full = csv_log(cfg, train_phase1(full, f.data, f.wm));
  auto more = csv_log(cfg, train_phase2(full, f.data, f.wm, full.cfg));
  log_full.insert(log_full.end(), more.begin(), more.end());

  auto part = make_state(cfg);
  RunOptions stop;
  stop.stop_after_steps = 3;
  auto log_resumed = csv_log(cfg, train_phase1(part, f.data, f.wm, stop));
  CHECK(part.phase == 1);
  auto restored = deserialize_checkpoint(serialize_checkpoint(part, f.wm));
  auto rest = csv_log(cfg, train_phase1(restored.state, f.data, restored.wm));
  log_resumed.insert(log_resumed.end(), rest.begin(), rest.end());
  // second interruption inside phase 2
  stop.stop_after_steps = 1;
  auto p2a = csv_log(cfg, train_phase2(restored.state, f.data, restored.wm, restored.state.cfg, stop));
  auto again = deserialize_checkpoint(serialize_checkpoint(restored.state, restored.wm));
  auto p2b = csv_log(cfg, train_phase2(again.state, f.data, again.wm, again.state.cfg));
  log_resumed.insert(log_resumed.end(), p2a.begin(), p2a.end());
  log_resumed.insert(log_resumed.end(), p2b.begin(), p2b.end());

  CHECK(log_resumed == log_full);
  CHECK(same_params(*again.state.g, *full.g));
  CHECK(same_params(*again.state.e, *full.e));
}

TEST_CASE("checkpoint encoding") {
  Fixture f;
  auto st = make_state(tiny::config());
  RunOptions stop;
  stop.stop_after_steps = 1;
  train_phase1(st, f.data, f.wm, stop);
  const auto bytes = serialize_checkpoint(st, f.wm);
  auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back.state, back.wm) == bytes);
  CHECK(back.state.global_step == 1);
  CHECK(back.wm.w1_hash == f.wm.w1_hash);

  SUBCASE("framework mismatch") {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes, Framework::HvsYuv), ConfigError);
    CHECK_NOTHROW(deserialize_checkpoint(bytes, Framework::HvsRgb));
  }
  SUBCASE("corruption") {
    auto bad = bytes;
    bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x10);
    CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 100)), CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), CheckpointError);
  }
  SUBCASE("version") {
    auto bad = bytes;
    bad[8] = 2;
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("version"), CheckpointError);
  }
  SUBCASE("file roundtrip") {
    auto dir = scratch("ckpt");
    save_checkpoint(st, f.wm, dir / "a.ckpt");
    CHECK_FALSE(fs::exists(dir / "a.ckpt.tmp"));
    auto loaded = load_checkpoint(dir / "a.ckpt");
    CHECK(serialize_checkpoint(loaded.state, loaded.wm) == bytes);
  }
}

TEST_CASE("phase two guards") {
  Fixture f;
  auto cfg = tiny::config();
  auto st = make_state(cfg);
  CHECK_THROWS_AS(train_phase2(st, f.data, f.wm, cfg), ConfigError);  // still in phase 1
  train_phase1(st, f.data, f.wm);
  auto yuv = cfg;
  yuv.loss.framework = Framework::HvsYuv;
  CHECK_THROWS_AS(train_phase2(st, f.data, f.wm, yuv), ConfigError);
  auto wider = cfg;
  wider.extractor.hidden_widths = {8, 8};
  CHECK_THROWS_AS(train_phase2(st, f.data, f.wm, wider), ConfigError);
  CHECK_THROWS_AS(train_phase1(st, f.data, f.wm), ConfigError);
  CHECK_THROWS_AS(run_phase(st, {}, f.wm), DataError);
  CHECK_THROWS_AS(run_phase(st, make_synthetic_dataset(2, 32, 1), f.wm), DataError);
}

TEST_CASE("non-finite loss stops before the update") {
  Fixture f;
  auto st = make_state(tiny::config());
  auto before_g = parameter_snapshot(*st.g);
  auto x = stack_inputs(f.data).slice(0, 0, 4).clone();
  x[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(training_step(st, x, stack_targets(f.data).slice(0, 0, 4), f.wm), DivergenceError);
  auto after_g = parameter_snapshot(*st.g);
  for (size_t i = 0; i < before_g.size(); ++i) CHECK(torch::equal(before_g[i], after_g[i]));
  CHECK(st.global_step == 0);
}

TEST_CASE("direct framework and discriminator") {
  Fixture f;
  auto cfg = tiny::config(Framework::Direct);
  cfg.discriminator.enabled = true;
  cfg.discriminator.patch_field = 16;
  cfg.discriminator.base_width = 4;
  auto st = make_state(cfg);
  CHECK(st.e->spec().in_channels == 3);
  train_phase1(st, f.data, f.wm);
  auto recs = train_phase2(st, f.data, f.wm, st.cfg);
  CHECK(recs.front().loss.terms.count("adv") == 1);
  CHECK(recs.front().loss.terms.count("L2") == 0);
  CHECK(step_csv_header(st.cfg) == "phase,epoch,batch,step,L1,L3,L5,L8,adv,total");
  auto back = deserialize_checkpoint(serialize_checkpoint(st, f.wm));
  CHECK(same_params(*back.state.d, *st.d));
  auto [first, second] = extract(st, stack_inputs(f.data));
  CHECK((first.sizes() == torch::IntArrayRef{8, 3, 16, 16}));
  CHECK(torch::equal(first, second));
}

TEST_CASE("step csv rows leave unused terms blank") {
  auto cfg = tiny::config();
  StepRecord r{1, 0, 0, 0, {}};
  r.loss.terms = {{"L1", 0.5}, {"L5", 0.25}};
  r.loss.total = 0.75;
  CHECK(step_csv_header(cfg) == "phase,epoch,batch,step,L1,L2,L3,L4,L5,L6,L7,L8,total");
  CHECK(step_csv_row(cfg, r) == "1,0,0,0,0.5,,,,0.25,,,,0.75");
}
