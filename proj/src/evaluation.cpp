#include "hvsmark/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hvsmark/errors.hpp"
#include "hvsmark/hashing.hpp"
#include "hvsmark/image_io.hpp"
#include "hvsmark/metrics.hpp"

namespace hvsmark {

namespace {

constexpr int64_t kChunk = 8;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sample_id(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void require_nonempty(const std::vector<DatasetSample>& test) {
  if (test.empty()) throw DataError("test set is empty");
}

// G outputs and E outputs for every test image, in fixed chunks so that
// every protocol sees the same floating-point path.
struct Forward {
  torch::Tensor generated;
  torch::Tensor first;
  torch::Tensor second;
};

Forward run_forward(TrainState& st, const torch::Tensor& xs, double sigma, uint64_t seed) {
  std::vector<torch::Tensor> gen, first, second;
  for (int64_t lo = 0, b = 0; lo < xs.size(0); lo += kChunk, ++b) {
    auto x = xs.slice(0, lo, std::min(xs.size(0), lo + kChunk));
    auto g = generate(st, x);
    auto attacked = imaging::gaussian_noise(g, sigma, derive_seed(seed, {static_cast<uint64_t>(b)}), ValueRange::Unit);
    auto [e1, e2] = extract(st, attacked);
    gen.push_back(g);
    first.push_back(e1);
    second.push_back(e2);
  }
  return {torch::cat(gen), torch::cat(first), torch::cat(second)};
}

double image_ber(const torch::Tensor& extracted, const ImageTensor& reference) {
  return ber(ImageTensor(extracted.to(torch::kFloat64), ValueRange::Signed), reference).value;
}

struct Quality {
  double psnr, ssim, ms_ssim;
};

Quality quality(const torch::Tensor& generated, const ImageTensor& target) {
  ImageTensor out(generated.to(torch::kFloat64), ValueRange::Unit);
  return {psnr(out, target).value, ssim(out, target).value, ms_ssim(out, target).value};
}

std::string write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("short write on " + path.string());
  return path.string();
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw DataError("cannot write " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Fidelity

void recompute_aggregates(EvalReport& report) {
  const std::vector<std::pair<std::string, double EvalRow::*>> cols{
      {"psnr", &EvalRow::psnr}, {"ssim", &EvalRow::ssim}, {"ms_ssim", &EvalRow::ms_ssim},
      {"ber1", &EvalRow::ber1}, {"ber2", &EvalRow::ber2}};
  report.aggregates.clear();
  if (report.rows.empty()) return;
  const double n = static_cast<double>(report.rows.size());
  for (const auto& [name, field] : cols) {
    double sum = 0.0;
    for (const auto& r : report.rows) sum += r.*field;
    const double mean = sum / n;
    double var = 0.0;
    for (const auto& r : report.rows) var += (r.*field - mean) * (r.*field - mean);
    report.aggregates[name] = {mean, std::sqrt(var / n)};
  }
}

EvalReport fidelity_report(TrainState& st, const std::vector<DatasetSample>& test, const WatermarkSet& wm) {
  require_nonempty(test);
  const auto fwd = run_forward(st, stack_inputs(test), 0.0, 0);
  EvalReport report;
  for (size_t i = 0; i < test.size(); ++i) {
    const auto q = quality(fwd.generated[static_cast<int64_t>(i)], test[i].target);
    report.rows.push_back({sample_id(i), q.psnr, q.ssim, q.ms_ssim,
                           image_ber(fwd.first[static_cast<int64_t>(i)], wm.w1),
                           image_ber(fwd.second[static_cast<int64_t>(i)], wm.w2)});
  }
  recompute_aggregates(report);
  report.meta = {{"framework", to_string(st.cfg.loss.framework)},
                 {"config_hash", config_hash(st.cfg)},
                 {"dataset_hash", dataset_hash(test)},
                 {"w1_hash", wm.w1_hash},
                 {"w2_hash", wm.w2_hash},
                 {"wz_hash", wm.wz_hash}};
  return report;
}

std::string to_csv(const EvalReport& report) {
  std::string out = "image_id,psnr,ssim,ms_ssim,ber1,ber2\n";
  for (const auto& r : report.rows) {
    out += r.image_id + "," + fmt(r.psnr) + "," + fmt(r.ssim) + "," + fmt(r.ms_ssim) + "," + fmt(r.ber1) +
           "," + fmt(r.ber2) + "\n";
  }
  return out;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"image_id", r.image_id}, {"psnr", r.psnr}, {"ssim", r.ssim},
                    {"ms_ssim", r.ms_ssim}, {"ber1", r.ber1}, {"ber2", r.ber2}});
  }
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [k, a] : report.aggregates) agg[k] = {{"mean", a.mean}, {"std", a.std}};
  return {{"rows", rows}, {"aggregates", agg}, {"meta", report.meta}};
}

// ---------------------------------------------------------------------------
// Noise sweep

SweepCurve robustness_sweep(TrainState& st, const std::vector<DatasetSample>& test, const WatermarkSet& wm,
                            const std::vector<double>& sigmas, uint64_t seed) {
  require_nonempty(test);
  if (sigmas.empty()) throw InvalidArgument("sigma list is empty");
  for (size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i])) throw InvalidArgument("sigmas must be finite and >= 0");
    if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw InvalidArgument("sigmas must be strictly increasing");
  }
  const auto xs = stack_inputs(test);
  SweepCurve curve;
  curve.seed = seed;
  for (double sigma : sigmas) {
    const auto fwd = run_forward(st, xs, sigma, seed);
    double b1 = 0.0, b2 = 0.0;
    for (int64_t i = 0; i < xs.size(0); ++i) {
      b1 += image_ber(fwd.first[i], wm.w1);
      b2 += image_ber(fwd.second[i], wm.w2);
    }
    const auto n = xs.size(0);
    curve.points.push_back({sigma, b1 / static_cast<double>(n), b2 / static_cast<double>(n), n});
  }
  return curve;
}

std::string to_csv(const SweepCurve& curve) {
  std::string out = "sigma,mean_ber1,mean_ber2,n\n";
  for (const auto& p : curve.points) {
    out += fmt(p.sigma) + "," + fmt(p.mean_ber1) + "," + fmt(p.mean_ber2) + "," + std::to_string(p.n) + "\n";
  }
  return out;
}

nlohmann::json to_json(const SweepCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points) {
    pts.push_back({{"sigma", p.sigma}, {"mean_ber1", p.mean_ber1}, {"mean_ber2", p.mean_ber2}, {"n", p.n}});
  }
  return {{"points", pts}, {"seed", curve.seed}};
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Studies

const std::vector<Channel>& study_channels() {
  static const std::vector<Channel> c{Channel::R, Channel::G, Channel::B,
                                      Channel::DCT_Y, Channel::DCT_U, Channel::DCT_V};
  return c;
}

ChannelReport channel_study(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& test,
                            const WatermarkSet& wm, const std::vector<Channel>& channels, const TrainConfig& cfg) {
  require_nonempty(test);
  if (channels.empty()) throw InvalidArgument("channel list is empty");
  const auto& allowed = study_channels();
  for (auto c : channels) {
    if (std::find(allowed.begin(), allowed.end(), c) == allowed.end()) {
      throw InvalidArgument("channel " + std::string(to_string(c)) + " is not a study channel");
    }
  }
  ChannelReport report;
  for (auto c : channels) {
    TrainConfig run = cfg;
    if (run.loss.framework == Framework::Direct) run.loss.framework = Framework::HvsRgb;
    run.first_carrier = c;
    run.robust = false;
    auto st = make_state(run);
    train_phase1(st, train, wm);
    const auto fwd = run_forward(st, stack_inputs(test), 0.0, 0);
    ChannelRow row{c, 0, 0, 0, 0};
    for (size_t i = 0; i < test.size(); ++i) {
      const auto q = quality(fwd.generated[static_cast<int64_t>(i)], test[i].target);
      row.psnr += q.psnr;
      row.ssim += q.ssim;
      row.ms_ssim += q.ms_ssim;
      row.ber1 += image_ber(fwd.first[static_cast<int64_t>(i)], wm.w1);
    }
    const double n = static_cast<double>(test.size());
    row.psnr /= n;
    row.ssim /= n;
    row.ms_ssim /= n;
    row.ber1 /= n;
    report.rows.push_back(row);
  }
  report.meta = {{"config_hash", config_hash(cfg)},
                 {"train_hash", dataset_hash(train)},
                 {"test_hash", dataset_hash(test)},
                 {"epochs", cfg.phase1_epochs}};
  return report;
}

std::string to_csv(const ChannelReport& report) {
  std::string out = "channel,psnr,ssim,ms_ssim,ber1\n";
  for (const auto& r : report.rows) {
    out += std::string(to_string(r.channel)) + "," + fmt(r.psnr) + "," + fmt(r.ssim) + "," + fmt(r.ms_ssim) +
           "," + fmt(r.ber1) + "\n";
  }
  return out;
}

nlohmann::json to_json(const ChannelReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"channel", to_string(r.channel)}, {"psnr", r.psnr}, {"ssim", r.ssim},
                    {"ms_ssim", r.ms_ssim}, {"ber1", r.ber1}});
  }
  return {{"rows", rows}, {"meta", report.meta}};
}

AblationReport ablation_study(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& test,
                              const WatermarkSet& wm, const TrainConfig& cfg,
                              const std::vector<Framework>& frameworks) {
  require_nonempty(test);
  if (frameworks.empty()) throw InvalidArgument("framework list is empty");
  const std::vector<StructuralVariant> variants{StructuralVariant::None, StructuralVariant::SsimOnly,
                                                StructuralVariant::MsssimOnly, StructuralVariant::Both};
  AblationReport report;
  for (auto f : frameworks) {
    TrainConfig base = cfg;
    base.loss.framework = f;
    base.first_carrier.reset();
    auto common = make_state(base);
    train_phase1(common, train, wm);
    for (auto v : variants) {
      TrainConfig run = base;
      run.loss.structural = v;
      auto copy = clone_state(common, wm);
      train_phase2(copy.state, train, wm, run);
      const auto r = fidelity_report(copy.state, test, wm);
      report.rows.push_back({f, v, r.aggregates.at("psnr").mean, r.aggregates.at("ssim").mean,
                             r.aggregates.at("ms_ssim").mean, r.aggregates.at("ber1").mean,
                             r.aggregates.at("ber2").mean, config_hash(copy.state.cfg)});
    }
  }
  report.meta = {{"config_hash", config_hash(cfg)},
                 {"train_hash", dataset_hash(train)},
                 {"test_hash", dataset_hash(test)}};
  return report;
}

std::string to_csv(const AblationReport& report) {
  std::string out = "framework,variant,psnr,ssim,ms_ssim,ber1,ber2,config_hash\n";
  for (const auto& r : report.rows) {
    out += std::string(to_string(r.framework)) + "," + std::string(to_string(r.variant)) + "," + fmt(r.psnr) +
           "," + fmt(r.ssim) + "," + fmt(r.ms_ssim) + "," + fmt(r.ber1) + "," + fmt(r.ber2) + "," +
           r.config_hash + "\n";
  }
  return out;
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"framework", to_string(r.framework)}, {"variant", to_string(r.variant)},
                    {"psnr", r.psnr}, {"ssim", r.ssim}, {"ms_ssim", r.ms_ssim},
                    {"ber1", r.ber1}, {"ber2", r.ber2}, {"config_hash", r.config_hash}});
  }
  return {{"rows", rows}, {"meta", report.meta}};
}

// ---------------------------------------------------------------------------
// Plots

std::vector<std::filesystem::path> plot_sweep(const SweepCurve& curve, const std::filesystem::path& dir) {
  if (curve.points.empty()) throw InvalidArgument("cannot plot an empty sweep");
  ensure_dir(dir);
  constexpr int kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 30, kBottom = 60;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  const double smax = std::max(curve.points.back().sigma, 1e-9);
  double bmax = 0.05;
  for (const auto& p : curve.points) bmax = std::max({bmax, p.mean_ber1, p.mean_ber2});
  bmax = std::min(1.0, std::ceil(bmax * 20.0) / 20.0);
  auto px = [&](double s) { return kLeft + static_cast<int>(std::lround((kW - kLeft - kRight) * s / smax)); };
  auto py = [&](double b) { return kH - kBottom - static_cast<int>(std::lround((kH - kTop - kBottom) * b / bmax)); };

  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  cv::line(canvas, {kLeft, kH - kBottom}, {kW - kRight, kH - kBottom}, black, 1);
  cv::line(canvas, {kLeft, kTop}, {kLeft, kH - kBottom}, black, 1);
  for (int k = 0; k <= 4; ++k) {
    const double b = bmax * k / 4.0;
    cv::line(canvas, {kLeft, py(b)}, {kW - kRight, py(b)}, grey, 1);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", b);
    cv::putText(canvas, buf, {8, py(b) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
  }
  for (const auto& p : curve.points) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", p.sigma);
    cv::putText(canvas, buf, {px(p.sigma) - 14, kH - kBottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1,
                cv::LINE_AA);
  }
  cv::putText(canvas, "noise sigma", {kW / 2 - 40, kH - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1, cv::LINE_AA);
  cv::putText(canvas, "mean BER", {8, 18}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1, cv::LINE_AA);

  const cv::Scalar c1(200, 80, 0), c2(0, 0, 200);  // BGR
  for (size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    cv::circle(canvas, {px(p.sigma), py(p.mean_ber1)}, 3, c1, cv::FILLED, cv::LINE_AA);
    cv::circle(canvas, {px(p.sigma), py(p.mean_ber2)}, 3, c2, cv::FILLED, cv::LINE_AA);
    if (i == 0) continue;
    const auto& q = curve.points[i - 1];
    cv::line(canvas, {px(q.sigma), py(q.mean_ber1)}, {px(p.sigma), py(p.mean_ber1)}, c1, 2, cv::LINE_AA);
    cv::line(canvas, {px(q.sigma), py(q.mean_ber2)}, {px(p.sigma), py(p.mean_ber2)}, c2, 2, cv::LINE_AA);
  }
  cv::putText(canvas, "BER1", {kW - 90, kTop + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, c1, 1, cv::LINE_AA);
  cv::putText(canvas, "BER2", {kW - 90, kTop + 30}, cv::FONT_HERSHEY_SIMPLEX, 0.5, c2, 1, cv::LINE_AA);

  const auto png = dir / "sweep.png";
  const auto csv = dir / "sweep_plot.csv";
  write_png(png, canvas);
  write_text(csv, to_csv(curve));
  return {png, csv};
}

std::vector<GallerySample> make_gallery(TrainState& st, const std::vector<DatasetSample>& test,
                                        int64_t count) {
  require_nonempty(test);
  const auto n = std::min<int64_t>(count, static_cast<int64_t>(test.size()));
  std::vector<DatasetSample> head(test.begin(), test.begin() + n);
  const auto fwd = run_forward(st, stack_inputs(head), 0.0, 0);
  std::vector<GallerySample> out;
  for (int64_t i = 0; i < n; ++i) {
    out.push_back({sample_id(static_cast<size_t>(i)),
                   {head[static_cast<size_t>(i)].input,
                    ImageTensor(fwd.generated[i].to(torch::kFloat64), ValueRange::Unit),
                    head[static_cast<size_t>(i)].target,
                    ImageTensor(fwd.first[i].to(torch::kFloat64), ValueRange::Signed)}});
  }
  return out;
}

std::vector<std::filesystem::path> plot_gallery(const std::vector<GallerySample>& gallery,
                                                const std::filesystem::path& dir) {
  if (gallery.empty()) throw InvalidArgument("cannot plot an empty gallery");
  ensure_dir(dir);
  constexpr int kPad = 4;
  const auto& first = gallery.front().panels.front();
  const int h = static_cast<int>(first.height()), w = static_cast<int>(first.width());
  const int cols = static_cast<int>(gallery.front().panels.size());
  const int rows = static_cast<int>(gallery.size());
  cv::Mat canvas(rows * (h + kPad) + kPad, cols * (w + kPad) + kPad, CV_8UC3, cv::Scalar(255, 255, 255));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto& panel = gallery[static_cast<size_t>(r)].panels[static_cast<size_t>(c)];
      auto unit = panel.range() == ValueRange::Signed ? (panel.data() + 1.0) * 0.5 : panel.data();
      auto hwc = unit.to(torch::kFloat64).permute({1, 2, 0}).contiguous();
      const double* src = hwc.data_ptr<double>();
      cv::Mat tile(h, w, CV_8UC3);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double* p = src + (static_cast<int64_t>(y) * w + x) * panel.channels();
          auto& dst = tile.at<cv::Vec3b>(y, x);
          for (int k = 0; k < 3; ++k) {
            dst[2 - k] = to_u8(p[panel.channels() == 3 ? k : 0]);
          }
        }
      }
      tile.copyTo(canvas(cv::Rect(kPad + c * (w + kPad), kPad + r * (h + kPad), w, h)));
    }
  }
  const auto png = dir / "gallery.png";
  write_png(png, canvas);
  return {png};
}

std::vector<std::filesystem::path> plot_report(const EvalReport& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw InvalidArgument("cannot plot an empty report");
  ensure_dir(dir);
  constexpr int kBar = 8, kH = 200, kPad = 10;
  const int w = kPad * 2 + static_cast<int>(report.rows.size()) * kBar * 2;
  cv::Mat canvas(kH * 2 + kPad * 3, w, CV_8UC3, cv::Scalar(255, 255, 255));
  std::string data = "image_id,psnr,ber1,ber2\n";
  for (size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    const int x = kPad + static_cast<int>(i) * kBar * 2;
    const int hp = static_cast<int>(std::lround(kH * std::clamp(r.psnr / kPsnrCap * 2.0, 0.0, 1.0)));
    cv::rectangle(canvas, {x, kPad + kH - hp}, {x + kBar, kPad + kH}, cv::Scalar(120, 120, 120), cv::FILLED);
    const int b1 = static_cast<int>(std::lround(kH * std::clamp(r.ber1, 0.0, 1.0)));
    const int b2 = static_cast<int>(std::lround(kH * std::clamp(r.ber2, 0.0, 1.0)));
    const int base = 2 * kPad + 2 * kH;
    cv::rectangle(canvas, {x, base - b1}, {x + kBar / 2, base}, cv::Scalar(200, 80, 0), cv::FILLED);
    cv::rectangle(canvas, {x + kBar / 2, base - b2}, {x + kBar, base}, cv::Scalar(0, 0, 200), cv::FILLED);
    data += r.image_id + "," + fmt(r.psnr) + "," + fmt(r.ber1) + "," + fmt(r.ber2) + "\n";
  }
  const auto png = dir / "report.png";
  const auto csv = dir / "report_plot.csv";
  write_png(png, canvas);
  write_text(csv, data);
  return {png, csv};
}

}  // namespace hvsmark
