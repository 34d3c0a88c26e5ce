#pragma once

#include <filesystem>

#include "screenseg/image.hpp"

namespace screenseg {

// 8-bit grayscale PNG I/O. Images round through [0,1] <-> [0,255]; masks are
// stored as {0,255} and anything else on read is a validation error.

void write_gray_png(const std::filesystem::path& path, const ImageF& img);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

ImageF read_gray_png(const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);

// Raw 8-bit grayscale write used by the plot renderer.
void write_gray8_png(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                     int height, int width);

}  // namespace screenseg
