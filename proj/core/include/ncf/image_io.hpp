#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ncf/image.hpp"

// 8-bit image and mask files. Loading divides by 255; writing rounds half up.
namespace ncf::io {

std::uint8_t to_u8(double v) noexcept;

// Detects PNG or binary PPM (P6) from the file magic.
RgbImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// Mask pixel values are class ids. Accepts binary PGM (P5) or 8-bit grayscale PNG.
SegmentationMask read_mask(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const SegmentationMask& mask);

// Exact 8-bit re-quantization, as if written and read back.
RgbImage quantize8(const RgbImage& img);

}  // namespace ncf::io
