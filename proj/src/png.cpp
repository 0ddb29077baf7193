#include "vqct/png.hpp"

#include <zlib.h>

#include "vqct/error.hpp"

namespace vqct {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::string body = std::string(type, 4) + data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

std::string encode(const std::vector<std::uint8_t>& pixels, int width, int height, int channels,
                   std::uint8_t color_type) {
  if (width <= 0 || height <= 0) throw Error("PNG needs a positive size");
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  if (pixels.size() != row * height) throw Error("PNG pixel buffer size mismatch");
  // Filter type 0 on every scanline.
  std::string raw;
  raw.reserve((row + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(pixels.data() + y * row), row);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &len, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error("PNG deflate failed");
  }
  z.resize(len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string{8, static_cast<char>(color_type), 0, 0, 0};
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", "");
  return out;
}

}  // namespace

std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, int width, int height) {
  return encode(pixels, width, height, 1, 0);
}

std::string encode_png_rgba(const std::vector<std::uint8_t>& pixels, int width, int height) {
  return encode(pixels, width, height, 4, 6);
}

}  // namespace vqct
