#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "hvsmark/imaging.hpp"

namespace hvsmark {

/// The two payload watermarks (binary, values in {-1, +1}) and the fixed
/// null-response noise image, all signed-range H x W x 3.
struct WatermarkSet {
  ImageTensor w1;
  ImageTensor w2;
  ImageTensor wz;
  uint64_t wz_seed = 0;
  std::string w1_hash;
  std::string w2_hash;
  std::string wz_hash;
};

/// Deterministic +-1 bitmap of `text` stretched to fill ~90% of the frame.
/// Throws InvalidArgument for empty or non-printable text and when the
/// rendering collapses to a single value at the requested size.
ImageTensor generate_logo(std::string_view text, int64_t height, int64_t width, int64_t channels = 3);

/// Binarizes a unit-range image at 0.5 (luma for color) and resizes it with
/// nearest-neighbour sampling into a +-1 watermark.
ImageTensor logo_from_image(const ImageTensor& img, int64_t height, int64_t width, int64_t channels = 3);

/// I.i.d. uniform noise in (-1, 1), deterministic per seed.
ImageTensor generate_wz(uint64_t seed, int64_t height, int64_t width, int64_t channels = 3);

/// Builds a set from text logos and a seeded Wz, filling in content hashes.
WatermarkSet make_watermark_set(int64_t height, int64_t width, uint64_t wz_seed,
                                std::string_view w1_text = "ACM", std::string_view w2_text = "IEEE");
/// Recomputes the three content hashes.
void refresh_hashes(WatermarkSet& wm);

enum class Decision { MarkedW1, MarkedW2, Unmarked };
std::string_view to_string(Decision d);

struct VerificationOutcome {
  Decision decision = Decision::Unmarked;
  double ber_w1 = 0.5;
  double ber_w2 = 0.5;
  double dist_wz = 0.0;
};

inline constexpr double kDefaultVerifyTau = 0.1;

/// Compares the extraction from the first carrier with W1 and from the
/// second with W2. marked_wk iff ber_wk <= tau and it is the smaller BER
/// (ties favour W1); dist_wz is the mean absolute distance of both
/// extractions to Wz.
VerificationOutcome verify(const ImageTensor& extracted_first, const ImageTensor& extracted_second,
                           const WatermarkSet& wm, double tau = kDefaultVerifyTau);

nlohmann::json to_json(const VerificationOutcome& v);

/// Writes w1/w2/wz as PNG (viewing) and raw containers (lossless) plus
/// watermarks.json with role, seed, hash and shape of each asset.
void save_watermarks(const WatermarkSet& wm, const std::filesystem::path& dir);
/// Loads a directory written by save_watermarks and checks the hashes.
WatermarkSet load_watermarks(const std::filesystem::path& dir);

}  // namespace hvsmark
