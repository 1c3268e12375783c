#pragma once

// Loss terms of the two HVS watermarking objectives.
//
// Term names follow the objective they belong to:
//   HVS-RGB: L1 E(G(x)_R)->W1   L2 E(G(x)_B)->W2   L3 E(y_R)->Wz   L4 E(y_B)->Wz
//            L5 G(x)->T        L6 R-channel fidelity  L7 B-channel fidelity
//            L8 structural
//   HVS-YUV: L9..L12 as L1..L4 on DCT_U / DCT_V planes, L5, L8,
//            L13 / L14 DCT_U / DCT_V fidelity
//   direct : L1, L3 on the full RGB image, L5, L8 (single-watermark baseline)
//
// total = alpha * (payload terms) + beta * (null-response terms) + task terms.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "hvsmark/imaging.hpp"
#include "hvsmark/metrics.hpp"

namespace hvsmark {

enum class Framework { HvsRgb, HvsYuv, Direct };
enum class StructuralVariant { None, SsimOnly, MsssimOnly, Both };

std::string_view to_string(Framework f);
std::string_view to_string(StructuralVariant v);
Framework framework_from_string(std::string_view name);
StructuralVariant structural_from_string(std::string_view name);

/// Carrier planes of a framework: HVS-RGB (R, B), HVS-YUV (DCT_U, DCT_V).
/// The direct framework has no single-channel carriers.
struct CarrierPair {
  Channel first;
  Channel second;
};
CarrierPair carriers_for(Framework f);

struct LossConfig {
  Framework framework = Framework::HvsRgb;
  double alpha = 1.0;
  double beta = 0.5;
  StructuralVariant structural = StructuralVariant::Both;
  /// Extraction targets are target_scale * W. Values below one keep the TanH
  /// head out of float32 saturation; 1.0 reproduces the plain objective.
  double target_scale = 0.9;
  SsimOptions ssim{};

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

struct LossBreakdown {
  std::map<std::string, double> terms;
  double total = 0.0;
};

/// Mean absolute difference. `target` may omit the leading batch dimension.
torch::Tensor extraction_loss(const torch::Tensor& extracted, const torch::Tensor& target);
/// Mean absolute difference between full 3-channel images (L5).
torch::Tensor task_loss(const torch::Tensor& output, const torch::Tensor& target);
/// Mean absolute difference between two planes of the same origin.
torch::Tensor channel_fidelity_loss(const ChannelPlane& output, const ChannelPlane& target);
/// Per-batch mean of 1 - structural similarity for the chosen variant.
torch::Tensor structural_loss(const torch::Tensor& output, const torch::Tensor& target,
                              StructuralVariant variant, const SsimOptions& opt = {});

/// Everything one evaluation of the objective needs. Extraction outputs
/// that the current phase does not use may be left undefined.
struct BatchContext {
  torch::Tensor generated;         // G(x), [N, 3, H, W] unit range
  torch::Tensor targets;           // T[G(x)]
  torch::Tensor extracted_first;   // E on the first marked carrier
  torch::Tensor extracted_second;  // E on the second marked carrier
  torch::Tensor s0_first;          // E on the first carrier of S0 images
  torch::Tensor s0_second;         // E on the second carrier of S0 images
  torch::Tensor w1, w2, wz;        // [3, H, W] signed watermarks
  /// Overrides the framework's first carrier (single-channel studies).
  std::optional<Channel> first_carrier;
};

/// Loss tensors by term name plus the weighted total (all differentiable).
struct LossTerms {
  std::map<std::string, torch::Tensor> terms;
  torch::Tensor total;

  LossBreakdown breakdown() const;
};

/// Weighted sum of already-computed terms for the given framework; terms a
/// framework does not define are ignored, missing ones count as absent.
torch::Tensor combine_terms(const std::map<std::string, torch::Tensor>& terms, const LossConfig& cfg);

/// Term names of the full objective in reporting order.
std::vector<std::string> objective_terms(Framework f);

/// Full objective: HVS-RGB alpha(L1+L2) + beta(L3+L4) + (L5+L6+L7+L8),
/// HVS-YUV alpha(L9+L10) + beta(L11+L12) + (L5+L8+L13+L14).
/// Throws InvalidArgument when a required batch component is missing.
LossTerms combined_loss(const BatchContext& ctx, const LossConfig& cfg);

/// First training phase: L5, L8 and alpha * extraction of W1 from the first
/// carrier. Carrier fidelity terms join in phase two.
LossTerms phase1_loss(const BatchContext& ctx, const LossConfig& cfg);

}  // namespace hvsmark
