#pragma once

#include <cstdint>
#include <filesystem>

#include "hvsmark/imaging.hpp"

namespace hvsmark {

/// Unit value -> 8-bit code: value * 255 rounded half-to-even, clamped to [0,255].
uint8_t to_u8(double unit_value);

/// Loads an 8-bit PNG (gray or color) as a unit-range RGB or grayscale image.
ImageTensor load_png(const std::filesystem::path& path);

/// Writes an 8-bit PNG. Signed images are mapped through (v + 1) / 2 first;
/// coefficient images are rejected.
void save_png(const ImageTensor& img, const std::filesystem::path& path);

// Lossless raw container (".hvr"), all integers little-endian:
//   bytes 0..3   magic "HVSR"
//   u32          format version (1)
//   u32 u32 u32  height, width, channels
//   u8           range tag (0 unit, 1 signed, 2 coeff), then 3 zero bytes
//   f64[H*W*C]   samples in H, W, C order (pixel-interleaved)
inline constexpr uint32_t kRawFormatVersion = 1;

void save_raw(const ImageTensor& img, const std::filesystem::path& path);
ImageTensor load_raw(const std::filesystem::path& path);

}  // namespace hvsmark
