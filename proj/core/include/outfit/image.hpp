#pragma once

#include <filesystem>
#include <vector>

namespace outfit {

inline constexpr std::size_t kRasterSide = 32;

// Decodes a JPEG file to a kRasterSide × kRasterSide grayscale raster with
// values in [0, 1], area-averaged from the source resolution.
std::vector<double> load_jpeg_raster(const std::filesystem::path& path);

// Area-averaging resize of an 8-bit grayscale image.
std::vector<double> resample_gray(const std::vector<unsigned char>& pixels, std::size_t width,
                                  std::size_t height, std::size_t side = kRasterSide);

}  // namespace outfit
