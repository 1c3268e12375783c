#pragma once

// Raster math: color conversion, channel extraction, orthonormal 2D DCT and
// additive Gaussian noise.
//
// Images are stored channels-first (C x H x W) in a floating-point
// torch::Tensor. The free functions in namespace `imaging` operate on plain
// tensors with arbitrary leading batch dimensions (channel axis -3) and are
// differentiable, so the training losses reuse them directly. The
// ImageTensor / ChannelPlane overloads add shape and range validation.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace hvsmark {

enum class ValueRange { Unit, Signed, Coeff };

enum class Channel { R, G, B, Y, U, V, DCT_Y, DCT_U, DCT_V };

std::string_view to_string(ValueRange range);
std::string_view to_string(Channel channel);
ValueRange value_range_from_string(std::string_view name);
/// Accepts "R", "DCT_U", "dct_u", "dct-u" and similar spellings.
Channel channel_from_string(std::string_view name);

bool is_rgb_channel(Channel c);
bool is_yuv_channel(Channel c);
bool is_dct_channel(Channel c);
/// DCT_Y -> Y, DCT_U -> U, DCT_V -> V; identity for spatial tags.
Channel spatial_source(Channel c);
/// Y -> DCT_Y, U -> DCT_U, V -> DCT_V. Throws InvalidArgument otherwise.
Channel dct_of(Channel c);

/// H x W x C raster (stored C x H x W) with a declared value range.
///
/// Invariants: H >= 8, W >= 8, C in {1, 3}, all values finite, and values
/// inside [0,1] for Unit or [-1,1] for Signed.
class ImageTensor {
 public:
  ImageTensor(torch::Tensor data, ValueRange range);

  const torch::Tensor& data() const { return data_; }
  ValueRange range() const { return range_; }
  int64_t channels() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
  ValueRange range_;
};

/// One channel of an image, shape [..., 1, H, W]. A leading batch dimension
/// is allowed so the same type carries training batches.
class ChannelPlane {
 public:
  ChannelPlane(torch::Tensor data, Channel origin);

  const torch::Tensor& data() const { return data_; }
  Channel origin() const { return origin_; }
  ValueRange range() const;
  int64_t height() const { return data_.size(-2); }
  int64_t width() const { return data_.size(-1); }

 private:
  torch::Tensor data_;
  Channel origin_;
};

/// BT.601 full-range conversion with zero-centred chroma:
///   Y = 0.299 R + 0.587 G + 0.114 B
///   U = (B - Y) / 1.772,  V = (R - Y) / 1.402
/// `inverse` is the exact algebraic inverse of `forward`.
struct YuvMatrix {
  std::array<std::array<double, 3>, 3> forward;
  std::array<std::array<double, 3>, 3> inverse;
};
const YuvMatrix& yuv_matrix();

namespace imaging {

torch::Tensor rgb_to_yuv(const torch::Tensor& rgb);
torch::Tensor yuv_to_rgb(const torch::Tensor& yuv);

/// Orthonormal DCT-II basis, row k = alpha_k cos(pi (2n+1) k / 2N).
torch::Tensor dct_matrix(int64_t n, torch::ScalarType dtype = torch::kFloat64);
/// Full-plane orthonormal 2D DCT-II over the last two dimensions.
torch::Tensor dct2(const torch::Tensor& x);
torch::Tensor idct2(const torch::Tensor& coeffs);

/// Selects one channel of an RGB tensor, converting to YUV and/or the DCT
/// domain as the tag requires. Returns shape [..., 1, H, W].
torch::Tensor channel(const torch::Tensor& rgb, Channel which);

/// x + N(0, sigma^2) drawn from a generator seeded with `seed`, then clamped
/// to `range` (no clamp for Coeff). sigma == 0 returns an exact copy.
torch::Tensor gaussian_noise(const torch::Tensor& x, double sigma, uint64_t seed,
                             ValueRange range);

}  // namespace imaging

ImageTensor rgb_to_yuv(const ImageTensor& img);
ImageTensor yuv_to_rgb(const ImageTensor& img);
ChannelPlane extract_channel(const ImageTensor& img, Channel which);
ChannelPlane dct2(const ChannelPlane& plane);
ChannelPlane idct2(const ChannelPlane& plane);
ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma, uint64_t seed);

}  // namespace hvsmark
