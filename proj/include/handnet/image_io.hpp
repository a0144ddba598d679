#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace handnet {

// Interleaved RGB raster with channel values on the 0..255 scale.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> rgb;  // height * width * 3

  float at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

// Sniffs the container (PNG, JPEG or HFTN) from the leading bytes. Grayscale
// and alpha inputs are converted to RGB. Throws DataError naming the path.
RgbImage read_image(const std::filesystem::path& path);

// Values are rounded and clamped to 0..255.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality = 95);

// Bilinear resampling with half-pixel centres and edge clamping.
RgbImage resize_bilinear(const RgbImage& image, std::size_t out_h, std::size_t out_w);

}  // namespace handnet
