#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "hvsmark/errors.hpp"
#include "hvsmark/evaluation.hpp"
#include "hvsmark/hashing.hpp"
#include "tiny.hpp"

using namespace hvsmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hvsmark_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Pearson correlation of average ranks, written out longhand.
double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  auto rank = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) ++less;
        if (w == v[i]) ++equal;
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  auto rx = rank(x), ry = rank(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct Fixture {
  std::vector<DatasetSample> train = make_synthetic_dataset(8, 16, 1);
  std::vector<DatasetSample> test = make_synthetic_dataset(6, 16, 2);
  WatermarkSet wm = make_watermark_set(16, 16, 1234);
};

}  // namespace

TEST_CASE("untrained model reports chance-level ber") {
  Fixture f;
  auto st = make_state(tiny::config());
  auto rep = fidelity_report(st, f.test, f.wm);
  REQUIRE(rep.rows.size() == 6);
  CHECK(std::abs(rep.aggregates.at("ber1").mean - 0.5) <= 0.15);
  CHECK(rep.rows[0].psnr > 0.0);
  CHECK(rep.meta.at("config_hash") == config_hash(st.cfg));
  CHECK(rep.meta.at("dataset_hash") == dataset_hash(f.test));

  double mean = 0, sq = 0;
  for (const auto& r : rep.rows) mean += r.ssim / 6;
  for (const auto& r : rep.rows) sq += (r.ssim - mean) * (r.ssim - mean) / 6;
  CHECK(std::abs(rep.aggregates.at("ssim").mean - mean) <= 1e-9);
  CHECK(std::abs(rep.aggregates.at("ssim").std - std::sqrt(sq)) <= 1e-9);

  auto csv = to_csv(rep);
  CHECK(csv.rfind("image_id,psnr,ssim,ms_ssim,ber1,ber2", 0) == 0);
  CHECK(to_json(rep)["rows"].size() == 6);
  CHECK_THROWS_AS(fidelity_report(st, {}, f.wm), DataError);
}

TEST_CASE("robustness sweep") {
  Fixture f;
  auto st = make_state(tiny::config());
  train_phase1(st, f.train, f.wm);
  const std::vector<double> sigmas{0.0, 0.1, 0.2, 0.3, 0.4};
  auto a = robustness_sweep(st, f.test, f.wm, sigmas, 5);
  auto b = robustness_sweep(st, f.test, f.wm, sigmas, 5);
  REQUIRE(a.points.size() == 5);
  CHECK(to_csv(a) == to_csv(b));
  auto rep = fidelity_report(st, f.test, f.wm);
  CHECK(a.points[0].mean_ber1 == rep.aggregates.at("ber1").mean);
  CHECK(a.points[0].mean_ber2 == rep.aggregates.at("ber2").mean);
  CHECK(a.points[2].n == 6);
  CHECK(to_json(a)["seed"] == 5);

  CHECK_THROWS_AS(robustness_sweep(st, f.test, f.wm, {0.2, 0.1}), InvalidArgument);
  CHECK_THROWS_AS(robustness_sweep(st, f.test, f.wm, {0.1, 0.1}), InvalidArgument);
  CHECK_THROWS_AS(robustness_sweep(st, f.test, f.wm, {-0.1}), InvalidArgument);
  CHECK_THROWS_AS(robustness_sweep(st, f.test, f.wm, {}), InvalidArgument);
}

TEST_CASE("spearman against the longhand oracle") {
  std::vector<double> x{0, 0.1, 0.2, 0.3, 0.4};
  CHECK(spearman(x, {0.01, 0.02, 0.05, 0.2, 0.3}) == doctest::Approx(1.0));
  CHECK(spearman(x, {0.3, 0.2, 0.1, 0.05, 0.0}) == doctest::Approx(-1.0));
  std::vector<double> ties{0.1, 0.1, 0.3, 0.2, 0.2};
  CHECK(spearman(x, ties) == doctest::Approx(spearman_oracle(x, ties)).epsilon(1e-12));
  std::vector<double> y{5, 1, 4, 2, 3};
  CHECK(spearman(x, y) == doctest::Approx(spearman_oracle(x, y)).epsilon(1e-12));
  CHECK(std::isnan(spearman(x, {1, 1, 1, 1, 1})));
  CHECK_THROWS_AS(spearman({1, 2}, {1}), InvalidArgument);
}

TEST_CASE("channel study") {
  Fixture f;
  auto cfg = tiny::config();
  cfg.phase1_epochs = 1;
  auto a = channel_study(f.train, f.test, f.wm, study_channels(), cfg);
  REQUIRE(a.rows.size() == 6);
  CHECK(a.rows[0].channel == Channel::R);
  CHECK(a.rows[5].channel == Channel::DCT_V);
  auto b = channel_study(f.train, f.test, f.wm, study_channels(), cfg);
  CHECK(sha256_hex(to_csv(a)) == sha256_hex(to_csv(b)));
  CHECK(to_csv(a).rfind("channel,psnr,ssim,ms_ssim,ber1", 0) == 0);
  CHECK_THROWS_AS(channel_study(f.train, f.test, f.wm, {Channel::U}, cfg), InvalidArgument);
  CHECK_THROWS_AS(channel_study(f.train, f.test, f.wm, {}, cfg), InvalidArgument);
}

TEST_CASE("ablation study") {
  Fixture f;
  auto cfg = tiny::config();
  cfg.phase1_epochs = 1;
  cfg.phase2_epochs = 1;
  auto a = ablation_study(f.train, f.test, f.wm, cfg);
  REQUIRE(a.rows.size() == 8);
  CHECK(a.rows[0].framework == Framework::HvsRgb);
  CHECK(a.rows[0].variant == StructuralVariant::None);
  CHECK(a.rows[7].framework == Framework::HvsYuv);
  CHECK(a.rows[7].variant == StructuralVariant::Both);
  CHECK(a.rows[0].config_hash != a.rows[1].config_hash);
  auto b = ablation_study(f.train, f.test, f.wm, cfg);
  CHECK(sha256_hex(to_csv(a)) == sha256_hex(to_csv(b)));
  CHECK(ablation_study(f.train, f.test, f.wm, cfg, {Framework::HvsYuv}).rows.size() == 4);
  CHECK_THROWS_AS(ablation_study(f.train, f.test, f.wm, cfg, {}), InvalidArgument);
}

TEST_CASE("plots") {
  Fixture f;
  auto st = make_state(tiny::config());
  auto dir = scratch("plots");
  auto curve = robustness_sweep(st, f.test, f.wm, {0.0, 0.2});
  auto files = plot_sweep(curve, dir / "a");
  auto again = plot_sweep(curve, dir / "b");
  REQUIRE(files.size() == again.size());
  for (size_t i = 0; i < files.size(); ++i) {
    CHECK(fs::exists(files[i]));
    CHECK(file_sha256(files[i]) == file_sha256(again[i]));
  }

  auto gallery = make_gallery(st, f.test, 3);
  REQUIRE(gallery.size() == 3);
  for (const auto& g : gallery) CHECK(g.panels.size() == 4);
  CHECK(make_gallery(st, f.test, 100).size() == 6);
  CHECK(fs::exists(plot_gallery(gallery, dir).front()));
  auto rep = fidelity_report(st, f.test, f.wm);
  CHECK(plot_report(rep, dir).size() == 2);

  CHECK_THROWS_AS(plot_sweep({}, dir), InvalidArgument);
  CHECK_THROWS_AS(plot_gallery({}, dir), InvalidArgument);
  CHECK_THROWS_AS(plot_report(EvalReport{}, dir), InvalidArgument);
}
