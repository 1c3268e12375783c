#include "hvsmark/metrics.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "hvsmark/errors.hpp"

namespace hvsmark {

namespace {

namespace F = torch::nn::functional;

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.data().sizes().equals(b.data().sizes())) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.data().sizes() << " vs " << b.data().sizes();
    throw InvalidShape(os.str());
  }
}

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

// Separable valid-mode Gaussian filtering of every channel independently.
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& taps) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto flat = x.reshape({n * c, 1, h, w});
  const auto k = taps.size(0);
  flat = F::conv2d(flat, taps.view({1, 1, 1, k}));
  flat = F::conv2d(flat, taps.view({1, 1, k, 1}));
  return flat.reshape({n, c, flat.size(2), flat.size(3)});
}

// where(x > 0, x^w, 0) with a finite gradient everywhere.
torch::Tensor safe_pow(const torch::Tensor& x, double w) {
  auto positive = x > 0;
  auto base = torch::where(positive, x, torch::ones_like(x));
  return torch::where(positive, base.pow(w), torch::zeros_like(x));
}

double unit_peak(ValueRange r) {
  switch (r) {
    case ValueRange::Unit: return 1.0;
    case ValueRange::Signed: return 2.0;
    case ValueRange::Coeff: break;
  }
  throw InvalidArgument("metric undefined for coefficient images");
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

}  // namespace

std::string_view to_string(MetricName name) {
  switch (name) {
    case MetricName::PSNR: return "PSNR";
    case MetricName::SSIM: return "SSIM";
    case MetricName::MS_SSIM: return "MS-SSIM";
    case MetricName::BER: return "BER";
  }
  return "?";
}

namespace metrics {

torch::Tensor gaussian_window(int64_t size, double sigma, torch::ScalarType dtype) {
  if (size < 1 || sigma <= 0.0) throw InvalidArgument("bad Gaussian window parameters");
  auto taps = torch::empty({size}, torch::kFloat64);
  auto acc = taps.accessor<double, 1>();
  const double center = static_cast<double>(size - 1) / 2.0;
  double sum = 0.0;
  for (int64_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    acc[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += acc[i];
  }
  return (taps / sum).to(dtype);
}

SsimParts ssim_parts(const torch::Tensor& x_in, const torch::Tensor& y_in, const SsimOptions& opt) {
  auto x = as_batch(x_in);
  auto y = as_batch(y_in);
  if (!x.sizes().equals(y.sizes()) || x.dim() != 4) {
    throw InvalidShape("ssim: inputs must share an [N, C, H, W] shape");
  }
  if (x.size(2) < opt.window || x.size(3) < opt.window) {
    std::ostringstream os;
    os << "ssim: image " << x.size(2) << "x" << x.size(3) << " is smaller than the "
       << opt.window << "x" << opt.window << " window";
    throw InvalidShape(os.str());
  }
  const auto taps = gaussian_window(opt.window, opt.sigma, x.scalar_type());
  const double c1 = std::pow(opt.k1 * opt.data_range, 2);
  const double c2 = std::pow(opt.k2 * opt.data_range, 2);

  auto mu_x = blur(x, taps);
  auto mu_y = blur(y, taps);
  auto mu_xx = mu_x * mu_x;
  auto mu_yy = mu_y * mu_y;
  auto mu_xy = mu_x * mu_y;
  auto s_xx = blur(x * x, taps) - mu_xx;
  auto s_yy = blur(y * y, taps) - mu_yy;
  auto s_xy = blur(x * y, taps) - mu_xy;

  auto cs_map = (2.0 * s_xy + c2) / (s_xx + s_yy + c2);
  auto l_map = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1);
  auto ssim_map = l_map * cs_map;
  return {ssim_map.mean({2, 3}), cs_map.mean({2, 3})};
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt) {
  return ssim_parts(x, y, opt).ssim.mean(1);
}

int64_t ms_ssim_scales(int64_t height, int64_t width, int64_t window) {
  int64_t scales = 0;
  while (scales < static_cast<int64_t>(kMsSsimWeights.size()) && height >= window &&
         width >= window) {
    ++scales;
    height /= 2;
    width /= 2;
  }
  return scales;
}

std::vector<double> ms_ssim_weights(int64_t scales) {
  if (scales < 1 || scales > static_cast<int64_t>(kMsSsimWeights.size())) {
    throw InvalidArgument("MS-SSIM scale count out of range");
  }
  std::vector<double> w(kMsSsimWeights.begin(), kMsSsimWeights.begin() + scales);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

torch::Tensor ms_ssim(const torch::Tensor& x_in, const torch::Tensor& y_in, const SsimOptions& opt) {
  auto x = as_batch(x_in);
  auto y = as_batch(y_in);
  if (!x.sizes().equals(y.sizes()) || x.dim() != 4) {
    throw InvalidShape("ms_ssim: inputs must share an [N, C, H, W] shape");
  }
  const auto scales = ms_ssim_scales(x.size(2), x.size(3), opt.window);
  if (scales == 0) {
    std::ostringstream os;
    os << "ms_ssim: image " << x.size(2) << "x" << x.size(3) << " is too small for one "
       << opt.window << "x" << opt.window << " scale";
    throw InvalidShape(os.str());
  }
  const auto weights = ms_ssim_weights(scales);
  torch::Tensor product;
  for (int64_t s = 0; s < scales; ++s) {
    auto parts = ssim_parts(x, y, opt);
    const bool last = s + 1 == scales;
    auto factor = safe_pow(last ? parts.ssim : parts.cs, weights[s]);
    product = product.defined() ? product * factor : factor;
    if (!last) {
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2).stride(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2).stride(2));
    }
  }
  return product.mean(1);
}

}  // namespace metrics

MetricResult psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "psnr");
  if (a.range() != b.range()) throw InvalidArgument("psnr: range tags differ");
  const double peak = unit_peak(a.range());
  auto diff = (a.data().to(torch::kFloat64) - b.data().to(torch::kFloat64));
  auto per_channel_mse = diff.pow(2).mean({1, 2});
  auto to_db = [peak](double mse) {
    return mse < kPsnrMinMse ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
  };
  MetricResult r{MetricName::PSNR, to_db(diff.pow(2).mean().item<double>()), {}};
  for (double mse : to_vector(per_channel_mse)) r.per_channel.push_back(to_db(mse));
  return r;
}

MetricResult ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt) {
  require_same_shape(a, b, "ssim");
  auto parts = metrics::ssim_parts(a.data().to(torch::kFloat64), b.data().to(torch::kFloat64), opt);
  auto per_channel = parts.ssim[0];
  return {MetricName::SSIM, per_channel.mean().item<double>(), to_vector(per_channel)};
}

MetricResult ms_ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt) {
  require_same_shape(a, b, "ms_ssim");
  const auto x = a.data().to(torch::kFloat64);
  const auto y = b.data().to(torch::kFloat64);
  MetricResult r{MetricName::MS_SSIM, metrics::ms_ssim(x, y, opt).item<double>(), {}};
  for (int64_t c = 0; c < a.channels(); ++c) {
    auto xc = x.slice(0, c, c + 1);
    auto yc = y.slice(0, c, c + 1);
    r.per_channel.push_back(metrics::ms_ssim(xc, yc, opt).item<double>());
  }
  return r;
}

MetricResult ber(const ImageTensor& extracted, const ImageTensor& reference, double threshold) {
  require_same_shape(extracted, reference, "ber");
  auto to_unit = [](const ImageTensor& img) {
    auto d = img.data().to(torch::kFloat64);
    switch (img.range()) {
      case ValueRange::Unit: return d;
      case ValueRange::Signed: return (d + 1.0) * 0.5;
      case ValueRange::Coeff: break;
    }
    throw InvalidArgument("ber undefined for coefficient images");
  };
  auto mismatch = (to_unit(extracted) > threshold).ne(to_unit(reference) > threshold);
  auto per_channel = mismatch.to(torch::kFloat64).mean({1, 2});
  return {MetricName::BER, mismatch.to(torch::kFloat64).mean().item<double>(),
          to_vector(per_channel)};
}

torch::Tensor ber_signed(const torch::Tensor& extracted, const torch::Tensor& reference) {
  // (v + 1) / 2 > 0.5  <=>  v > 0
  auto ref = reference.dim() < extracted.dim() ? reference.expand_as(extracted) : reference;
  auto mismatch = (extracted > 0).ne(ref > 0).to(torch::kFloat64);
  return mismatch.flatten(1).mean(1);
}

}  // namespace hvsmark
