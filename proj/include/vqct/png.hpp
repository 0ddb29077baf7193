#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vqct {

/// 8-bit grayscale PNG; `pixels` row-major, width·height bytes.
std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, int width, int height);
/// 8-bit RGBA PNG; 4·width·height bytes.
std::string encode_png_rgba(const std::vector<std::uint8_t>& pixels, int width, int height);

}  // namespace vqct
