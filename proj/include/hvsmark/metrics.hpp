#pragma once

#include <array>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "hvsmark/imaging.hpp"

namespace hvsmark {

enum class MetricName { PSNR, SSIM, MS_SSIM, BER };
std::string_view to_string(MetricName name);

struct MetricResult {
  MetricName name;
  double value = 0.0;
  std::vector<double> per_channel;
};

/// Reported when MSE < kPsnrMinMse, i.e. for (near-)identical images.
inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrMinMse = 1e-10;

/// Exponents of the five MS-SSIM scales, finest first.
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace metrics {

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
torch::Tensor gaussian_window(int64_t size, double sigma, torch::ScalarType dtype);

/// Per-(sample, channel) means of the SSIM map and of its contrast-structure
/// factor, using valid (unpadded) windows. Inputs are [N, C, H, W] or
/// [C, H, W]; outputs are [N, C].
struct SsimParts {
  torch::Tensor ssim;
  torch::Tensor cs;
};
SsimParts ssim_parts(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt = {});

/// Mean SSIM per sample, averaged over channels. Shape [N].
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt = {});

/// Number of MS-SSIM scales (at most 5) whose images still fit the window
/// after repeated 2x2 mean pooling; 0 when not even one does.
int64_t ms_ssim_scales(int64_t height, int64_t width, int64_t window = 11);

/// The first `scales` exponents, renormalized to sum to one.
std::vector<double> ms_ssim_weights(int64_t scales);

/// Multi-scale SSIM per sample, averaged over channels. Shape [N].
/// Negative per-scale factors are clipped to zero before exponentiation.
torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt = {});

}  // namespace metrics

MetricResult psnr(const ImageTensor& a, const ImageTensor& b);
MetricResult ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt = {});
MetricResult ms_ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt = {});

/// Fraction of mismatched bits after mapping both images to the unit range
/// (signed values via (v + 1) / 2) and binarizing with v > threshold.
MetricResult ber(const ImageTensor& extracted, const ImageTensor& reference, double threshold = 0.5);

/// Tensor form of ber for batches: returns one BER per leading index.
torch::Tensor ber_signed(const torch::Tensor& extracted, const torch::Tensor& reference);

}  // namespace hvsmark
