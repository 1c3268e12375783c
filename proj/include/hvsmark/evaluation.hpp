#pragma once

// Fidelity tables, the noise sweep, the per-channel and loss-variant studies
// and their plots.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvsmark/training.hpp"

namespace hvsmark {

struct EvalRow {
  std::string image_id;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double ber1 = 0.0;
  double ber2 = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, Aggregate> aggregates;  // keyed by column name
  nlohmann::json meta = nlohmann::json::object();
};

/// Fills report.aggregates from report.rows.
void recompute_aggregates(EvalReport& report);

/// Per-image PSNR / SSIM / MS-SSIM of G(x) against T[x] and the BER of
/// both extracted watermarks. Throws DataError for an empty test set.
EvalReport fidelity_report(TrainState& state, const std::vector<DatasetSample>& test, const WatermarkSet& wm);

std::string to_csv(const EvalReport& report);
nlohmann::json to_json(const EvalReport& report);

struct SweepPoint {
  double sigma = 0.0;
  double mean_ber1 = 0.0;
  double mean_ber2 = 0.0;
  int64_t n = 0;
};

struct SweepCurve {
  std::vector<SweepPoint> points;
  uint64_t seed = 0;
};

/// Adds N(0, sigma^2) noise to every generated image (clamped to [0, 1]),
/// extracts and averages the BERs. The noise for image batch b is drawn from
/// a generator seeded with derive_seed(seed, {b}) and scaled by sigma, so all
/// sigmas share one noise field. Sigmas must be strictly increasing and >= 0.
SweepCurve robustness_sweep(TrainState& state, const std::vector<DatasetSample>& test, const WatermarkSet& wm,
                            const std::vector<double>& sigmas, uint64_t seed = 0);

std::string to_csv(const SweepCurve& curve);
nlohmann::json to_json(const SweepCurve& curve);

/// Spearman rank correlation (average ranks for ties). NaN when either
/// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Channels accepted by channel_study.
const std::vector<Channel>& study_channels();

struct ChannelRow {
  Channel channel = Channel::R;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double ber1 = 0.0;
};

struct ChannelReport {
  std::vector<ChannelRow> rows;
  nlohmann::json meta = nlohmann::json::object();
};

/// Trains one W1-only model per carrier channel for cfg.phase1_epochs under
/// identical seeds and reports the quality of G's outputs on `test`.
ChannelReport channel_study(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& test,
                            const WatermarkSet& wm, const std::vector<Channel>& channels, const TrainConfig& cfg);

std::string to_csv(const ChannelReport& report);
nlohmann::json to_json(const ChannelReport& report);

struct AblationRow {
  Framework framework = Framework::HvsRgb;
  StructuralVariant variant = StructuralVariant::Both;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double ber1 = 0.0;
  double ber2 = 0.0;
  std::string config_hash;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  nlohmann::json meta = nlohmann::json::object();
};

/// For each framework: one phase-1 run with cfg's structural setting, then
/// phase 2 once per structural variant starting from copies of that state.
AblationReport ablation_study(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& test,
                              const WatermarkSet& wm, const TrainConfig& cfg,
                              const std::vector<Framework>& frameworks = {Framework::HvsRgb, Framework::HvsYuv});

std::string to_csv(const AblationReport& report);
nlohmann::json to_json(const AblationReport& report);

// ---------------------------------------------------------------------------
// Plots

/// BER-vs-sigma line plot (sweep.png) and its data layer (sweep_plot.csv).
std::vector<std::filesystem::path> plot_sweep(const SweepCurve& curve, const std::filesystem::path& dir);

struct GallerySample {
  std::string image_id;
  std::vector<ImageTensor> panels;  // input, output, ground truth, extracted W1
};

/// Panels for the first `count` test samples.
std::vector<GallerySample> make_gallery(TrainState& state, const std::vector<DatasetSample>& test,
                                        int64_t count = 4);
/// One row of panels per sample (gallery.png).
std::vector<std::filesystem::path> plot_gallery(const std::vector<GallerySample>& gallery,
                                                const std::filesystem::path& dir);

/// Per-row bar strip of a fidelity report (report.png) plus report_plot.csv.
std::vector<std::filesystem::path> plot_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace hvsmark
