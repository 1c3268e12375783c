#include "hvsmark/watermark.hpp"

#include <fstream>

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "hvsmark/errors.hpp"
#include "hvsmark/hashing.hpp"
#include "hvsmark/image_io.hpp"
#include "hvsmark/metrics.hpp"

namespace hvsmark {

namespace {

ImageTensor from_mask(const cv::Mat& mask, int64_t channels) {
  auto t = torch::empty({mask.rows, mask.cols}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x) acc[y][x] = mask.at<uint8_t>(y, x) > 127 ? 1.0 : -1.0;
  return ImageTensor(t.unsqueeze(0).repeat({channels, 1, 1}).contiguous(), ValueRange::Signed);
}

}  // namespace

ImageTensor generate_logo(std::string_view text, int64_t height, int64_t width, int64_t channels) {
  if (text.empty()) throw InvalidArgument("logo text must not be empty");
  for (char c : text) {
    if (c < 0x20 || c > 0x7e) throw InvalidArgument("logo text must be printable ASCII");
  }
  if (height < 8 || width < 8) throw InvalidShape("logo must be at least 8x8");

  // Render large, crop to the ink, then stretch into the frame.
  const std::string s(text);
  constexpr int kFont = cv::FONT_HERSHEY_DUPLEX;
  constexpr double kScale = 2.0;
  constexpr int kThickness = 4;
  int baseline = 0;
  const cv::Size size = cv::getTextSize(s, kFont, kScale, kThickness, &baseline);
  cv::Mat canvas = cv::Mat::zeros(size.height + baseline + 2 * kThickness, size.width + 2 * kThickness, CV_8UC1);
  cv::putText(canvas, s, {kThickness, size.height + kThickness}, kFont, kScale, 255, kThickness, cv::LINE_8);
  const cv::Rect ink = cv::boundingRect(canvas);
  if (ink.area() == 0) throw InvalidArgument("logo text renders no ink");

  const int fit_h = std::max(1, static_cast<int>(height * 9 / 10));
  const int fit_w = std::max(1, static_cast<int>(width * 9 / 10));
  cv::Mat glyphs;
  cv::resize(canvas(ink), glyphs, {fit_w, fit_h}, 0, 0, cv::INTER_NEAREST);
  cv::Mat frame = cv::Mat::zeros(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  glyphs.copyTo(frame(cv::Rect(static_cast<int>((width - fit_w) / 2),
                               static_cast<int>((height - fit_h) / 2), fit_w, fit_h)));
  const int ink_pixels = cv::countNonZero(frame > 127);
  if (ink_pixels == 0 || ink_pixels == frame.rows * frame.cols) {
    throw InvalidArgument("logo text '" + s + "' is unrenderable at this size");
  }
  return from_mask(frame, channels);
}

ImageTensor logo_from_image(const ImageTensor& img, int64_t height, int64_t width, int64_t channels) {
  if (img.range() != ValueRange::Unit) throw InvalidArgument("logo source must be a unit-range image");
  auto d = img.data().to(torch::kFloat64);
  auto luma = img.channels() == 3 ? imaging::rgb_to_yuv(d).select(0, 0) : d.select(0, 0);
  luma = luma.contiguous();
  cv::Mat src(static_cast<int>(luma.size(0)), static_cast<int>(luma.size(1)), CV_64FC1, luma.data_ptr<double>());
  cv::Mat mask = src > 0.5;
  cv::Mat resized;
  cv::resize(mask, resized, {static_cast<int>(width), static_cast<int>(height)}, 0, 0, cv::INTER_NEAREST);
  return from_mask(resized, channels);
}

ImageTensor generate_wz(uint64_t seed, int64_t height, int64_t width, int64_t channels) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto u = torch::rand({channels, height, width}, gen, torch::TensorOptions().dtype(torch::kFloat64));
  // rand is [0,1); keep the result strictly inside (-1,1).
  u = torch::where(u == 0.0, torch::full_like(u, 0.5), u);
  return ImageTensor(u * 2.0 - 1.0, ValueRange::Signed);
}

void refresh_hashes(WatermarkSet& wm) {
  wm.w1_hash = tensor_hash(wm.w1.data());
  wm.w2_hash = tensor_hash(wm.w2.data());
  wm.wz_hash = tensor_hash(wm.wz.data());
}

WatermarkSet make_watermark_set(int64_t height, int64_t width, uint64_t wz_seed,
                                std::string_view w1_text, std::string_view w2_text) {
  WatermarkSet wm{generate_logo(w1_text, height, width), generate_logo(w2_text, height, width),
                  generate_wz(wz_seed, height, width), wz_seed, {}, {}, {}};
  refresh_hashes(wm);
  return wm;
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::MarkedW1: return "marked_w1";
    case Decision::MarkedW2: return "marked_w2";
    case Decision::Unmarked: return "unmarked";
  }
  return "?";
}

VerificationOutcome verify(const ImageTensor& extracted_first, const ImageTensor& extracted_second,
                           const WatermarkSet& wm, double tau) {
  VerificationOutcome v;
  v.ber_w1 = ber(extracted_first, wm.w1).value;
  v.ber_w2 = ber(extracted_second, wm.w2).value;
  auto wz = wm.wz.data().to(torch::kFloat64);
  const double d1 = (extracted_first.data().to(torch::kFloat64) - wz).abs().mean().item<double>();
  const double d2 = (extracted_second.data().to(torch::kFloat64) - wz).abs().mean().item<double>();
  v.dist_wz = 0.5 * (d1 + d2);
  if (v.ber_w1 <= tau && v.ber_w1 <= v.ber_w2) {
    v.decision = Decision::MarkedW1;
  } else if (v.ber_w2 <= tau && v.ber_w2 < v.ber_w1) {
    v.decision = Decision::MarkedW2;
  } else {
    v.decision = Decision::Unmarked;
  }
  return v;
}

nlohmann::json to_json(const VerificationOutcome& v) {
  return {{"decision", to_string(v.decision)},
          {"ber_w1", v.ber_w1},
          {"ber_w2", v.ber_w2},
          {"dist_wz", v.dist_wz}};
}

void save_watermarks(const WatermarkSet& wm, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  auto put = [&](const ImageTensor& img, const std::string& role, const std::string& hash) {
    save_png(img, dir / (role + ".png"));
    save_raw(img, dir / (role + ".hvr"));
    nlohmann::json entry = {{"role", role},
                            {"hash", hash},
                            {"shape", {img.height(), img.width(), img.channels()}}};
    if (role == "wz") entry["seed"] = wm.wz_seed;
    manifest.push_back(entry);
  };
  put(wm.w1, "w1", wm.w1_hash);
  put(wm.w2, "w2", wm.w2_hash);
  put(wm.wz, "wz", wm.wz_hash);
  std::ofstream(dir / "watermarks.json") << manifest.dump(2) << "\n";
}

WatermarkSet load_watermarks(const std::filesystem::path& dir) {
  std::ifstream is(dir / "watermarks.json");
  if (!is) throw DataError("missing watermarks.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  WatermarkSet wm{load_raw(dir / "w1.hvr"), load_raw(dir / "w2.hvr"), load_raw(dir / "wz.hvr"), 0, {}, {}, {}};
  refresh_hashes(wm);
  for (const auto& entry : manifest) {
    const auto role = entry.at("role").get<std::string>();
    const auto& actual = role == "w1" ? wm.w1_hash : role == "w2" ? wm.w2_hash : wm.wz_hash;
    if (entry.at("hash").get<std::string>() != actual) {
      throw DataError("watermark asset " + role + " does not match its recorded hash");
    }
    if (role == "wz") wm.wz_seed = entry.at("seed").get<uint64_t>();
  }
  return wm;
}

}  // namespace hvsmark
