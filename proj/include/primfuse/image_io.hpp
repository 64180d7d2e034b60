#pragma once

#include "primfuse/core_types.hpp"

#include <cstdint>
#include <string>

namespace primfuse {

/// 8-bit RGB PNG; float channels in [0,1] are rounded to 0..255.
void write_png_rgb8(const std::string& path, const Image<Rgb>& img);
Image<Rgb> read_png_rgb8(const std::string& path);

/// 16-bit grayscale PNG (used for depth in millimeters and plane indices).
void write_png_gray16(const std::string& path, const Image<std::uint16_t>& img);
Image<std::uint16_t> read_png_gray16(const std::string& path);

/// Raw float32 planar file: int32 header (channels, height, width) followed
/// by channel-major float32 data.
void write_float_planar(const std::string& path, const std::vector<Image<float>>& channels);
std::vector<Image<float>> read_float_planar(const std::string& path);

}  // namespace primfuse
