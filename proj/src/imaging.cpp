#include "hvsmark/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "hvsmark/errors.hpp"

namespace hvsmark {

namespace {

constexpr double kKr = 0.299;
constexpr double kKb = 0.114;
constexpr double kKg = 1.0 - kKr - kKb;
constexpr double kUScale = 2.0 * (1.0 - kKb);  // 1.772
constexpr double kVScale = 2.0 * (1.0 - kKr);  // 1.402

YuvMatrix make_yuv_matrix() {
  YuvMatrix m{};
  m.forward = {{{kKr, kKg, kKb},
                {-kKr / kUScale, -kKg / kUScale, (1.0 - kKb) / kUScale},
                {(1.0 - kKr) / kVScale, -kKg / kVScale, -kKb / kVScale}}};
  // R = Y + 1.402 V, B = Y + 1.772 U, G = (Y - Kr R - Kb B) / Kg
  m.inverse = {{{1.0, 0.0, kVScale},
                {1.0, -kKb * kUScale / kKg, -kKr * kVScale / kKg},
                {1.0, kUScale, 0.0}}};
  return m;
}

torch::Tensor as_tensor(const std::array<std::array<double, 3>, 3>& m,
                        torch::ScalarType dtype) {
  auto t = torch::empty({3, 3}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) acc[i][j] = m[i][j];
  return t.to(dtype);
}

// Applies a 3x3 color matrix along the channel axis (-3).
torch::Tensor mix_channels(const torch::Tensor& x, const std::array<std::array<double, 3>, 3>& m) {
  if (x.dim() < 3 || x.size(-3) != 3) {
    std::ostringstream os;
    os << "color conversion expects 3 channels on axis -3, got shape " << x.sizes();
    throw InvalidShape(os.str());
  }
  auto mat = as_tensor(m, x.scalar_type());
  return torch::einsum("ij,...jhw->...ihw", {mat, x});
}

void check_plane_dims(const torch::Tensor& x, const char* what) {
  if (x.dim() < 2 || x.size(-1) < 1 || x.size(-2) < 1) {
    std::ostringstream os;
    os << what << " expects at least a 2D tensor, got shape " << x.sizes();
    throw InvalidShape(os.str());
  }
}

std::string normalized_tag(std::string_view name) {
  std::string s;
  for (char c : name) {
    if (c == '-' || c == ' ') c = '_';
    s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return s;
}

}  // namespace

std::string_view to_string(ValueRange range) {
  switch (range) {
    case ValueRange::Unit: return "unit";
    case ValueRange::Signed: return "signed";
    case ValueRange::Coeff: return "coeff";
  }
  return "?";
}

std::string_view to_string(Channel channel) {
  switch (channel) {
    case Channel::R: return "R";
    case Channel::G: return "G";
    case Channel::B: return "B";
    case Channel::Y: return "Y";
    case Channel::U: return "U";
    case Channel::V: return "V";
    case Channel::DCT_Y: return "DCT_Y";
    case Channel::DCT_U: return "DCT_U";
    case Channel::DCT_V: return "DCT_V";
  }
  return "?";
}

ValueRange value_range_from_string(std::string_view name) {
  const auto s = normalized_tag(name);
  if (s == "UNIT") return ValueRange::Unit;
  if (s == "SIGNED") return ValueRange::Signed;
  if (s == "COEFF") return ValueRange::Coeff;
  throw InvalidArgument("unknown value range '" + std::string(name) + "'");
}

Channel channel_from_string(std::string_view name) {
  const auto s = normalized_tag(name);
  for (Channel c : {Channel::R, Channel::G, Channel::B, Channel::Y, Channel::U, Channel::V,
                    Channel::DCT_Y, Channel::DCT_U, Channel::DCT_V}) {
    if (s == to_string(c)) return c;
  }
  throw InvalidArgument("unknown channel tag '" + std::string(name) + "'");
}

bool is_rgb_channel(Channel c) { return c == Channel::R || c == Channel::G || c == Channel::B; }
bool is_yuv_channel(Channel c) { return c == Channel::Y || c == Channel::U || c == Channel::V; }
bool is_dct_channel(Channel c) {
  return c == Channel::DCT_Y || c == Channel::DCT_U || c == Channel::DCT_V;
}

Channel spatial_source(Channel c) {
  switch (c) {
    case Channel::DCT_Y: return Channel::Y;
    case Channel::DCT_U: return Channel::U;
    case Channel::DCT_V: return Channel::V;
    default: return c;
  }
}

Channel dct_of(Channel c) {
  switch (c) {
    case Channel::Y: return Channel::DCT_Y;
    case Channel::U: return Channel::DCT_U;
    case Channel::V: return Channel::DCT_V;
    default:
      throw InvalidArgument("DCT is defined for Y/U/V planes only, got " +
                            std::string(to_string(c)));
  }
}

// ---------------------------------------------------------------------------

ImageTensor::ImageTensor(torch::Tensor data, ValueRange range)
    : data_(std::move(data)), range_(range) {
  if (!data_.defined() || data_.dim() != 3) {
    throw InvalidShape("ImageTensor expects a C x H x W tensor");
  }
  if (!data_.is_floating_point()) {
    throw InvalidArgument("ImageTensor expects floating-point data");
  }
  const auto c = data_.size(0), h = data_.size(1), w = data_.size(2);
  if ((c != 1 && c != 3) || h < 8 || w < 8) {
    std::ostringstream os;
    os << "ImageTensor shape " << h << "x" << w << "x" << c
       << " violates H>=8, W>=8, C in {1,3}";
    throw InvalidShape(os.str());
  }
  if (!torch::isfinite(data_).all().item<bool>()) {
    throw InvalidArgument("ImageTensor contains non-finite values");
  }
  const double lo = data_.min().item<double>();
  const double hi = data_.max().item<double>();
  if (range_ == ValueRange::Unit && (lo < 0.0 || hi > 1.0)) {
    throw InvalidArgument("unit-range image has values outside [0,1]");
  }
  if (range_ == ValueRange::Signed && (lo < -1.0 || hi > 1.0)) {
    throw InvalidArgument("signed-range image has values outside [-1,1]");
  }
}

ChannelPlane::ChannelPlane(torch::Tensor data, Channel origin)
    : data_(std::move(data)), origin_(origin) {
  if (!data_.defined() || data_.dim() < 3 || data_.size(-3) != 1) {
    throw InvalidShape("ChannelPlane expects shape [..., 1, H, W]");
  }
}

ValueRange ChannelPlane::range() const {
  if (is_dct_channel(origin_)) return ValueRange::Coeff;
  if (origin_ == Channel::U || origin_ == Channel::V) return ValueRange::Signed;
  return ValueRange::Unit;
}

const YuvMatrix& yuv_matrix() {
  static const YuvMatrix m = make_yuv_matrix();
  return m;
}

// ---------------------------------------------------------------------------

namespace imaging {

torch::Tensor rgb_to_yuv(const torch::Tensor& rgb) { return mix_channels(rgb, yuv_matrix().forward); }

torch::Tensor yuv_to_rgb(const torch::Tensor& yuv) { return mix_channels(yuv, yuv_matrix().inverse); }

torch::Tensor dct_matrix(int64_t n, torch::ScalarType dtype) {
  if (n < 1) throw InvalidShape("DCT size must be positive");
  auto m = torch::empty({n, n}, torch::kFloat64);
  auto acc = m.accessor<double, 2>();
  const double a0 = std::sqrt(1.0 / static_cast<double>(n));
  const double ak = std::sqrt(2.0 / static_cast<double>(n));
  for (int64_t k = 0; k < n; ++k) {
    for (int64_t i = 0; i < n; ++i) {
      acc[k][i] = (k == 0 ? a0 : ak) *
                  std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * k) /
                           (2.0 * static_cast<double>(n)));
    }
  }
  return m.to(dtype);
}

torch::Tensor dct2(const torch::Tensor& x) {
  check_plane_dims(x, "dct2");
  auto ch = dct_matrix(x.size(-2), x.scalar_type());
  auto cw = dct_matrix(x.size(-1), x.scalar_type());
  return torch::matmul(torch::matmul(ch, x), cw.t());
}

torch::Tensor idct2(const torch::Tensor& coeffs) {
  check_plane_dims(coeffs, "idct2");
  auto ch = dct_matrix(coeffs.size(-2), coeffs.scalar_type());
  auto cw = dct_matrix(coeffs.size(-1), coeffs.scalar_type());
  return torch::matmul(torch::matmul(ch.t(), coeffs), cw);
}

torch::Tensor channel(const torch::Tensor& rgb, Channel which) {
  if (rgb.dim() < 3 || rgb.size(-3) != 3) {
    throw InvalidArgument("channel " + std::string(to_string(which)) +
                          " requires a 3-channel RGB tensor");
  }
  using torch::indexing::Ellipsis;
  using torch::indexing::Slice;
  auto pick = [](const torch::Tensor& t, int64_t i) {
    return t.index({Ellipsis, Slice(i, i + 1), Slice(), Slice()});
  };
  switch (which) {
    case Channel::R: return pick(rgb, 0);
    case Channel::G: return pick(rgb, 1);
    case Channel::B: return pick(rgb, 2);
    default: break;
  }
  const auto yuv = rgb_to_yuv(rgb);
  const Channel spatial = spatial_source(which);
  const int64_t idx = spatial == Channel::Y ? 0 : (spatial == Channel::U ? 1 : 2);
  auto plane = pick(yuv, idx);
  return is_dct_channel(which) ? dct2(plane) : plane;
}

torch::Tensor gaussian_noise(const torch::Tensor& x, double sigma, uint64_t seed,
                             ValueRange range) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("noise sigma must be finite and >= 0");
  }
  if (sigma == 0.0) return x.clone();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = torch::randn(x.sizes(), gen, torch::TensorOptions().dtype(x.scalar_type()));
  auto out = x + noise.to(x.device()) * sigma;
  switch (range) {
    case ValueRange::Unit: return out.clamp(0.0, 1.0);
    case ValueRange::Signed: return out.clamp(-1.0, 1.0);
    case ValueRange::Coeff: return out;
  }
  return out;
}

}  // namespace imaging

// ---------------------------------------------------------------------------

ImageTensor rgb_to_yuv(const ImageTensor& img) {
  if (img.channels() != 3 || img.range() != ValueRange::Unit) {
    throw InvalidShape("rgb_to_yuv expects a 3-channel unit-range image");
  }
  // Y in [0,1], U and V in [-0.5,0.5]; the whole image fits the signed range.
  return ImageTensor(imaging::rgb_to_yuv(img.data()).clamp(-1.0, 1.0), ValueRange::Signed);
}

ImageTensor yuv_to_rgb(const ImageTensor& img) {
  if (img.channels() != 3) throw InvalidShape("yuv_to_rgb expects a 3-channel image");
  // The clamp only absorbs rounding at the cube faces for valid YUV input.
  return ImageTensor(imaging::yuv_to_rgb(img.data()).clamp(0.0, 1.0), ValueRange::Unit);
}

ChannelPlane extract_channel(const ImageTensor& img, Channel which) {
  if (img.channels() == 1) {
    // A grayscale raster is its own luma plane.
    if (which == Channel::Y) return ChannelPlane(img.data().clone(), Channel::Y);
    if (which == Channel::DCT_Y) return ChannelPlane(imaging::dct2(img.data()), Channel::DCT_Y);
    throw InvalidArgument("channel " + std::string(to_string(which)) +
                          " is not available on a grayscale image");
  }
  return ChannelPlane(imaging::channel(img.data(), which).clone(), which);
}

ChannelPlane dct2(const ChannelPlane& plane) {
  return ChannelPlane(imaging::dct2(plane.data()), dct_of(plane.origin()));
}

ChannelPlane idct2(const ChannelPlane& plane) {
  if (!is_dct_channel(plane.origin())) {
    throw InvalidArgument("idct2 expects a DCT_* plane, got " +
                          std::string(to_string(plane.origin())));
  }
  return ChannelPlane(imaging::idct2(plane.data()), spatial_source(plane.origin()));
}

ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma, uint64_t seed) {
  return ImageTensor(imaging::gaussian_noise(img.data(), sigma, seed, img.range()), img.range());
}

}  // namespace hvsmark
