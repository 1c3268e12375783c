#pragma once

// Synthetic paired data, the two-phase training loop and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "hvsmark/imaging.hpp"
#include "hvsmark/losses.hpp"
#include "hvsmark/networks.hpp"
#include "hvsmark/watermark.hpp"

namespace hvsmark {

/// Deterministic child seed from a parent seed and a tuple of indices.
uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> path);

// ---------------------------------------------------------------------------
// Data

struct DatasetSample {
  ImageTensor input;   // x
  ImageTensor target;  // T[x]
};

/// Fixed class palette of the synthetic segmentation targets, 8-bit RGB.
/// Class 0 is the background.
const std::vector<std::array<uint8_t, 3>>& synthetic_palette();

/// Scenes of colored ellipses and rectangles over a textured background,
/// paired with their flat palette segmentation map. All values lie on the
/// 8-bit grid so the PNG form of the dataset is lossless.
std::vector<DatasetSample> make_synthetic_dataset(int64_t n, int64_t size, uint64_t seed);

/// [N, 3, H, W] float32 stacks of inputs or targets.
torch::Tensor stack_inputs(const std::vector<DatasetSample>& data);
torch::Tensor stack_targets(const std::vector<DatasetSample>& data);

std::string dataset_hash(const std::vector<DatasetSample>& data);

/// input/NNNN.png, target/NNNN.png and dataset.json (count, size, hash plus
/// any extra metadata).
void save_dataset(const std::vector<DatasetSample>& data, const std::filesystem::path& dir,
                  const nlohmann::json& meta = nlohmann::json::object());
/// Throws DataError for a missing or inconsistent directory.
std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Configuration and state

struct TrainConfig {
  LossConfig loss;
  double lr = 2e-4;
  int64_t batch_size = 4;
  int64_t phase1_epochs = 20;
  int64_t phase2_epochs = 40;
  bool robust = false;
  double sigma_max = 0.5;
  uint64_t seed = 0;
  int64_t image_size = 64;
  GeneratorSpec generator;
  ExtractorSpec extractor;
  DiscriminatorSpec discriminator;
  double adversarial_weight = 0.01;
  /// Replaces the framework's first carrier (single-watermark studies).
  std::optional<Channel> first_carrier;

  /// Propagates image_size into the network specs and checks every field.
  void finalize();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
std::string config_hash(const TrainConfig& c);

struct StepRecord {
  int phase = 1;
  int64_t epoch = 0;
  int64_t batch = 0;
  int64_t global_step = 0;
  LossBreakdown loss;
};

struct TrainState {
  TrainConfig cfg;
  Generator g{nullptr};
  Extractor e{nullptr};
  Discriminator d{nullptr};
  std::unique_ptr<torch::optim::Adam> opt;
  std::unique_ptr<torch::optim::Adam> opt_d;
  int phase = 1;
  int64_t epoch = 0;        // epoch within the current phase
  int64_t batch = 0;        // next batch index within the epoch
  int64_t global_step = 0;  // optimizer steps taken so far

  bool phase_complete() const;
  bool finished() const { return phase == 2 && phase_complete(); }
};

/// Fresh state: networks initialised from cfg.seed, optimizer moments empty.
TrainState make_state(TrainConfig cfg);

// ---------------------------------------------------------------------------
// Stepping

/// Carrier planes of `images` fed to E: (first, second). The direct
/// framework passes the whole image as `first` and leaves `second` empty.
std::pair<torch::Tensor, torch::Tensor> extractor_planes(const TrainConfig& cfg, const torch::Tensor& images);

struct StepResult {
  LossTerms loss;
  torch::Tensor generated;        // G(x)
  torch::Tensor task_image;       // image the task losses were computed on
  torch::Tensor extractor_input;  // image the E planes were taken from
  std::vector<double> sigmas;     // per-sample noise levels (robust phase 2)
};

/// One optimizer step of the current phase on (x, y). S0 defaults to the
/// targets. Throws DivergenceError before stepping if the loss is not finite.
StepResult training_step(TrainState& state, const torch::Tensor& x, const torch::Tensor& y,
                         const WatermarkSet& wm, const torch::Tensor& s0 = {});

/// Batch order of one epoch, a function of (seed, phase, epoch) only.
std::vector<int64_t> epoch_order(const TrainConfig& cfg, int phase, int64_t epoch, int64_t n);

struct RunOptions {
  /// Return after this many steps even mid-epoch (0 = run the phase out).
  int64_t stop_after_steps = 0;
  std::function<void(const StepRecord&)> on_step;
};

/// Advances the current phase from where the state stands. Returns the
/// step records produced by this call.
std::vector<StepRecord> run_phase(TrainState& state, const std::vector<DatasetSample>& data,
                                  const WatermarkSet& wm, const RunOptions& opts = {});

/// Runs phase 1 to completion on a fresh state and moves it to phase 2.
std::vector<StepRecord> train_phase1(TrainState& state, const std::vector<DatasetSample>& data,
                                     const WatermarkSet& wm, const RunOptions& opts = {});
/// Runs phase 2. `cfg` is the configuration the caller intends to continue
/// with; a different framework than the state's throws ConfigError.
std::vector<StepRecord> train_phase2(TrainState& state, const std::vector<DatasetSample>& data,
                                     const WatermarkSet& wm, const TrainConfig& cfg,
                                     const RunOptions& opts = {});

std::string step_csv_header(const TrainConfig& cfg);
std::string step_csv_row(const TrainConfig& cfg, const StepRecord& r);

// ---------------------------------------------------------------------------
// Inference

/// G(x) in evaluation mode, float32, no gradients.
torch::Tensor generate(TrainState& state, const torch::Tensor& x);
/// E outputs for both carriers of `images`; `second` is E on the full image
/// under the direct framework.
std::pair<torch::Tensor, torch::Tensor> extract(TrainState& state, const torch::Tensor& images);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr uint32_t kCheckpointVersion = 1;

/// Serialised state plus watermark assets. Byte-identical for identical
/// states and ends in a SHA-256 digest of its contents.
std::string serialize_checkpoint(const TrainState& state, const WatermarkSet& wm);
void save_checkpoint(const TrainState& state, const WatermarkSet& wm, const std::filesystem::path& path);

struct Restored {
  TrainState state;
  WatermarkSet wm;
};
/// Throws CheckpointError for corrupt archives and version mismatches and
/// ConfigError when `expected` names a different framework.
Restored deserialize_checkpoint(const std::string& bytes, std::optional<Framework> expected = std::nullopt);
Restored load_checkpoint(const std::filesystem::path& path, std::optional<Framework> expected = std::nullopt);

/// Independent deep copy (via the checkpoint encoding).
Restored clone_state(const TrainState& state, const WatermarkSet& wm);

}  // namespace hvsmark
