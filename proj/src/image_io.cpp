#include "hvsmark/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hvsmark/errors.hpp"

namespace hvsmark {

static_assert(std::endian::native == std::endian::little,
              "raw container I/O assumes a little-endian host");

uint8_t to_u8(double unit_value) {
  // std::nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const double v = std::nearbyint(unit_value * 255.0);
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

ImageTensor load_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot read image " + path.string());
  if (m.depth() != CV_8U) throw DataError("expected an 8-bit image: " + path.string());
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  const int c = m.channels();
  if (c != 1 && c != 3) throw DataError("unsupported channel count in " + path.string());
  m = m.clone();
  auto hwc = torch::from_blob(m.data, {m.rows, m.cols, c}, torch::kUInt8).clone();
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat64).div(255.0).contiguous();
  return ImageTensor(chw, ValueRange::Unit);
}

void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  torch::Tensor unit;
  switch (img.range()) {
    case ValueRange::Unit: unit = img.data(); break;
    case ValueRange::Signed: unit = (img.data() + 1.0) * 0.5; break;
    case ValueRange::Coeff: throw InvalidArgument("cannot save DCT coefficients as PNG");
  }
  auto hwc = unit.to(torch::kFloat64).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
  const int c = static_cast<int>(img.channels());
  cv::Mat m(h, w, CV_8UC(c));
  const double* src = hwc.data_ptr<double>();
  for (int i = 0; i < h * w * c; ++i) m.data[i] = to_u8(src[i]);
  if (c == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image " + path.string());
}

namespace {

constexpr std::array<char, 4> kRawMagic{'H', 'V', 'S', 'R'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated raw image container");
  return v;
}

}  // namespace

void save_raw(const ImageTensor& img, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kRawMagic.data(), kRawMagic.size());
  put<uint32_t>(os, kRawFormatVersion);
  put<uint32_t>(os, static_cast<uint32_t>(img.height()));
  put<uint32_t>(os, static_cast<uint32_t>(img.width()));
  put<uint32_t>(os, static_cast<uint32_t>(img.channels()));
  put<uint8_t>(os, static_cast<uint8_t>(img.range()));
  const std::array<char, 3> pad{};
  os.write(pad.data(), pad.size());
  auto hwc = img.data().to(torch::kFloat64).permute({1, 2, 0}).contiguous();
  os.write(reinterpret_cast<const char*>(hwc.data_ptr<double>()),
           static_cast<std::streamsize>(hwc.numel() * sizeof(double)));
  if (!os) throw DataError("failed writing " + path.string());
}

ImageTensor load_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kRawMagic) throw DataError("not a raw image container: " + path.string());
  const auto version = get<uint32_t>(is);
  if (version != kRawFormatVersion) {
    throw DataError("unsupported raw container version " + std::to_string(version));
  }
  const auto h = get<uint32_t>(is), w = get<uint32_t>(is), c = get<uint32_t>(is);
  const auto tag = get<uint8_t>(is);
  std::array<char, 3> pad{};
  is.read(pad.data(), pad.size());
  if (tag > 2) throw DataError("bad range tag in " + path.string());
  if (h == 0 || w == 0 || c == 0 || static_cast<uint64_t>(h) * w * c > (1ull << 31)) {
    throw DataError("implausible raw image dimensions in " + path.string());
  }
  auto hwc = torch::empty({h, w, c}, torch::kFloat64);
  is.read(reinterpret_cast<char*>(hwc.data_ptr<double>()),
          static_cast<std::streamsize>(hwc.numel() * sizeof(double)));
  if (!is) throw DataError("truncated raw image container " + path.string());
  return ImageTensor(hwc.permute({2, 0, 1}).contiguous(), static_cast<ValueRange>(tag));
}

}  // namespace hvsmark
