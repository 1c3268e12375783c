#include "hvsmark/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "hvsmark/errors.hpp"

namespace hvsmark {

namespace {

std::string lowered(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '_' || c == ' ') c = '-';
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// Term names by role for each framework.
struct TermNames {
  std::string ext1, ext2, null1, null2, fid1, fid2;
};

TermNames names_for(Framework f) {
  switch (f) {
    case Framework::HvsRgb: return {"L1", "L2", "L3", "L4", "L6", "L7"};
    case Framework::HvsYuv: return {"L9", "L10", "L11", "L12", "L13", "L14"};
    case Framework::Direct: return {"L1", "", "L3", "", "", ""};
  }
  return {};
}

void require(const torch::Tensor& t, const char* what, Framework f) {
  if (!t.defined()) {
    throw InvalidArgument(std::string("batch context is missing ") + what + " required by " +
                          std::string(to_string(f)));
  }
}

ChannelPlane carrier_plane(const torch::Tensor& rgb, Channel c) {
  return ChannelPlane(imaging::channel(rgb, c), c);
}

}  // namespace

std::string_view to_string(Framework f) {
  switch (f) {
    case Framework::HvsRgb: return "hvs-rgb";
    case Framework::HvsYuv: return "hvs-yuv";
    case Framework::Direct: return "direct";
  }
  return "?";
}

std::string_view to_string(StructuralVariant v) {
  switch (v) {
    case StructuralVariant::None: return "none";
    case StructuralVariant::SsimOnly: return "ssim_only";
    case StructuralVariant::MsssimOnly: return "msssim_only";
    case StructuralVariant::Both: return "both";
  }
  return "?";
}

Framework framework_from_string(std::string_view name) {
  const auto s = lowered(name);
  if (s == "hvs-rgb" || s == "rgb") return Framework::HvsRgb;
  if (s == "hvs-yuv" || s == "yuv") return Framework::HvsYuv;
  if (s == "direct") return Framework::Direct;
  throw ConfigError("unknown framework '" + std::string(name) + "'");
}

StructuralVariant structural_from_string(std::string_view name) {
  const auto s = lowered(name);
  if (s == "none") return StructuralVariant::None;
  if (s == "ssim-only" || s == "ssim") return StructuralVariant::SsimOnly;
  if (s == "msssim-only" || s == "ms-ssim-only" || s == "msssim") return StructuralVariant::MsssimOnly;
  if (s == "both") return StructuralVariant::Both;
  throw ConfigError("unknown structural variant '" + std::string(name) + "'");
}

CarrierPair carriers_for(Framework f) {
  switch (f) {
    case Framework::HvsRgb: return {Channel::R, Channel::B};
    case Framework::HvsYuv: return {Channel::DCT_U, Channel::DCT_V};
    case Framework::Direct: break;
  }
  throw InvalidArgument("the direct framework has no single-channel carriers");
}

void LossConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 0");
  if (!(target_scale > 0.0) || target_scale > 1.0) throw ConfigError("target_scale must be in (0, 1]");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"framework", to_string(c.framework)},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"structural", to_string(c.structural)},
       {"norm", "l1"},
       {"target_scale", c.target_scale},
       {"ssim_window", c.ssim.window},
       {"ssim_sigma", c.ssim.sigma}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  c.framework = framework_from_string(j.at("framework").get<std::string>());
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  c.structural = structural_from_string(j.at("structural").get<std::string>());
  j.at("target_scale").get_to(c.target_scale);
  j.at("ssim_window").get_to(c.ssim.window);
  j.at("ssim_sigma").get_to(c.ssim.sigma);
}

LossBreakdown LossTerms::breakdown() const {
  LossBreakdown b;
  for (const auto& [name, t] : terms) b.terms[name] = t.item<double>();
  b.total = total.item<double>();
  return b;
}

// ---------------------------------------------------------------------------

torch::Tensor extraction_loss(const torch::Tensor& extracted, const torch::Tensor& target) {
  const bool broadcast = target.dim() + 1 == extracted.dim() &&
                         target.sizes().equals(extracted.sizes().slice(1));
  if (!broadcast && !target.sizes().equals(extracted.sizes())) {
    std::ostringstream os;
    os << "extraction_loss: shape mismatch " << extracted.sizes() << " vs " << target.sizes();
    throw InvalidShape(os.str());
  }
  return (extracted - target).abs().mean();
}

torch::Tensor task_loss(const torch::Tensor& output, const torch::Tensor& target) {
  if (!output.sizes().equals(target.sizes())) {
    std::ostringstream os;
    os << "task_loss: shape mismatch " << output.sizes() << " vs " << target.sizes();
    throw InvalidShape(os.str());
  }
  return (output - target).abs().mean();
}

torch::Tensor channel_fidelity_loss(const ChannelPlane& output, const ChannelPlane& target) {
  if (output.origin() != target.origin()) {
    throw InvalidArgument("channel_fidelity_loss: cannot compare " +
                          std::string(to_string(output.origin())) + " with " +
                          std::string(to_string(target.origin())));
  }
  if (!output.data().sizes().equals(target.data().sizes())) {
    throw InvalidShape("channel_fidelity_loss: plane shapes differ");
  }
  return (output.data() - target.data()).abs().mean();
}

torch::Tensor structural_loss(const torch::Tensor& output, const torch::Tensor& target,
                              StructuralVariant variant, const SsimOptions& opt) {
  if (!output.sizes().equals(target.sizes())) throw InvalidShape("structural_loss: shape mismatch");
  switch (variant) {
    case StructuralVariant::None:
      return torch::zeros({}, output.options());
    case StructuralVariant::SsimOnly:
      return (1.0 - metrics::ssim(output, target, opt)).mean();
    case StructuralVariant::MsssimOnly:
      return (1.0 - metrics::ms_ssim(output, target, opt)).mean();
    case StructuralVariant::Both: {
      auto s = metrics::ssim(output, target, opt);
      auto m = metrics::ms_ssim(output, target, opt);
      return (1.0 - (s + m) / 2.0).mean();
    }
  }
  return torch::zeros({}, output.options());
}

// ---------------------------------------------------------------------------

std::vector<std::string> objective_terms(Framework f) {
  switch (f) {
    case Framework::HvsRgb: return {"L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8"};
    case Framework::HvsYuv: return {"L9", "L10", "L11", "L12", "L5", "L8", "L13", "L14"};
    case Framework::Direct: return {"L1", "L3", "L5", "L8"};
  }
  return {};
}

torch::Tensor combine_terms(const std::map<std::string, torch::Tensor>& terms, const LossConfig& cfg) {
  const auto n = names_for(cfg.framework);
  torch::Tensor total;
  for (const auto& name : objective_terms(cfg.framework)) {
    auto it = terms.find(name);
    if (it == terms.end()) continue;
    double weight = 1.0;
    if (name == n.ext1 || name == n.ext2) weight = cfg.alpha;
    if (name == n.null1 || name == n.null2) weight = cfg.beta;
    auto weighted = weight == 1.0 ? it->second : it->second * weight;
    total = total.defined() ? total + weighted : weighted;
  }
  if (!total.defined()) throw InvalidArgument("combine_terms: no terms of the objective present");
  return total;
}

namespace {

// Task terms: L5 and L8, plus the carrier fidelity terms when `with_carriers` is set.
void add_task_terms(LossTerms& out, const BatchContext& ctx, const LossConfig& cfg, bool with_carriers) {
  require(ctx.generated, "generated images", cfg.framework);
  require(ctx.targets, "target images", cfg.framework);
  out.terms["L5"] = task_loss(ctx.generated, ctx.targets);
  out.terms["L8"] = structural_loss(ctx.generated, ctx.targets, cfg.structural, cfg.ssim);
  if (!with_carriers || cfg.framework == Framework::Direct) return;
  const auto n = names_for(cfg.framework);
  if (ctx.first_carrier) {
    const Channel c = *ctx.first_carrier;
    out.terms[n.fid1] = channel_fidelity_loss(carrier_plane(ctx.generated, c),
                                              carrier_plane(ctx.targets, c));
    return;
  }
  const auto carriers = carriers_for(cfg.framework);
  out.terms[n.fid1] = channel_fidelity_loss(carrier_plane(ctx.generated, carriers.first),
                                            carrier_plane(ctx.targets, carriers.first));
  out.terms[n.fid2] = channel_fidelity_loss(carrier_plane(ctx.generated, carriers.second),
                                            carrier_plane(ctx.targets, carriers.second));
}

}  // namespace

LossTerms combined_loss(const BatchContext& ctx, const LossConfig& cfg) {
  cfg.validate();
  const auto n = names_for(cfg.framework);
  const double k = cfg.target_scale;
  LossTerms out;
  require(ctx.w1, "W1", cfg.framework);
  require(ctx.wz, "Wz", cfg.framework);
  require(ctx.extracted_first, "E output on the first carrier", cfg.framework);
  require(ctx.s0_first, "E output on S0 first carrier", cfg.framework);
  out.terms[n.ext1] = extraction_loss(ctx.extracted_first, ctx.w1 * k);
  out.terms[n.null1] = extraction_loss(ctx.s0_first, ctx.wz * k);
  if (cfg.framework != Framework::Direct) {
    require(ctx.w2, "W2", cfg.framework);
    require(ctx.extracted_second, "E output on the second carrier", cfg.framework);
    require(ctx.s0_second, "E output on S0 second carrier", cfg.framework);
    out.terms[n.ext2] = extraction_loss(ctx.extracted_second, ctx.w2 * k);
    out.terms[n.null2] = extraction_loss(ctx.s0_second, ctx.wz * k);
  }
  add_task_terms(out, ctx, cfg, true);
  out.total = combine_terms(out.terms, cfg);
  return out;
}

LossTerms phase1_loss(const BatchContext& ctx, const LossConfig& cfg) {
  cfg.validate();
  const auto n = names_for(cfg.framework);
  LossTerms out;
  require(ctx.w1, "W1", cfg.framework);
  require(ctx.extracted_first, "E output on the first carrier", cfg.framework);
  out.terms[n.ext1] = extraction_loss(ctx.extracted_first, ctx.w1 * cfg.target_scale);
  add_task_terms(out, ctx, cfg, false);
  out.total = combine_terms(out.terms, cfg);
  return out;
}

}  // namespace hvsmark
