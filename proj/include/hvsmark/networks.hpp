#pragma once

// Host generator G, watermark extractor E and the optional patch
// discriminator D.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace hvsmark {

/// U-Net style encoder-decoder, H x W x 3 -> H x W x 3 in the unit range.
struct GeneratorSpec {
  int64_t height = 64;
  int64_t width = 64;
  int64_t channels = 3;
  int64_t depth = 3;        // number of 2x downsampling levels
  int64_t base_width = 32;  // feature channels at full resolution

  void validate() const;
};

/// Stride-1 convolution stack, H x W x in_channels -> H x W x out_channels
/// in (-1, 1). The last convolution has `out_channels` filters and a TanH.
struct ExtractorSpec {
  int64_t height = 64;
  int64_t width = 64;
  int64_t in_channels = 1;
  int64_t out_channels = 3;
  std::vector<int64_t> hidden_widths{16, 32, 32, 32, 16};

  void validate() const;
};

/// Full-scale (256x256) extractor widths (32, 64, 128, 64, 32) followed by the output layer.
std::vector<int64_t> full_extractor_widths();

/// PatchGAN-style critic. patch_field selects the layer count: 16, 34 or 70.
struct DiscriminatorSpec {
  int64_t patch_field = 70;
  bool enabled = false;
  int64_t in_channels = 3;
  int64_t base_width = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);
void to_json(nlohmann::json& j, const ExtractorSpec& s);
void from_json(const nlohmann::json& j, ExtractorSpec& s);
void to_json(nlohmann::json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::json& j, DiscriminatorSpec& s);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorSpec& spec);
  torch::Tensor forward(const torch::Tensor& x);
  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  torch::nn::Sequential stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::ModuleList fuse_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  // Learned per-pixel logit offset of the output head. Gives the otherwise
  // translation-equivariant network a way to express position-dependent
  // content such as a fixed embedding pattern.
  torch::Tensor output_bias_;
};
TORCH_MODULE(Generator);

class ExtractorImpl : public torch::nn::Module {
 public:
  explicit ExtractorImpl(const ExtractorSpec& spec);
  torch::Tensor forward(const torch::Tensor& x);
  const ExtractorSpec& spec() const { return spec_; }

 private:
  ExtractorSpec spec_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Extractor);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorSpec& spec);
  /// Patch logits, [N, 1, h, w]; feed to a BCE-with-logits loss.
  torch::Tensor forward(const torch::Tensor& x);
  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Re-initializes every convolution from a private generator seeded with
/// `seed` (He-uniform weights, +-sqrt(6/fan_in)) and zeroes biases and all
/// other parameters. The build_* functions leave the global torch RNG state
/// as they found it.
void initialize_parameters(torch::nn::Module& module, uint64_t seed);

Generator build_generator(const GeneratorSpec& spec, uint64_t seed);
Extractor build_extractor(const ExtractorSpec& spec, uint64_t seed);
/// Throws ConfigError when the DiscriminatorSpec is disabled.
Discriminator build_discriminator(const DiscriminatorSpec& spec, uint64_t seed);

/// (kernel, stride, padding) of each discriminator convolution, in order.
struct ConvGeometry {
  int64_t kernel;
  int64_t stride;
  int64_t padding;
};
std::vector<ConvGeometry> discriminator_geometry(const DiscriminatorSpec& spec);

/// Snapshot of every parameter of a module, cloned, in registration order.
std::vector<torch::Tensor> parameter_snapshot(const torch::nn::Module& module);

}  // namespace hvsmark
