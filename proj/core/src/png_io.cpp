#include "screenseg/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "screenseg/error.hpp"

namespace screenseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_rows(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                int height, int width) {
    if (height <= 0 || width <= 0 ||
        pixels.size() != static_cast<size_t>(height) * static_cast<size_t>(width))
        throw ShapeError("png write: pixel buffer does not match dimensions");

    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write error: " + path.string());
    }

    png_init_io(png, f.get());
    // Fixed compression settings keep output byte-deterministic.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_rows(const std::filesystem::path& path, int& height, int& width) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError("cannot open for reading: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read error: " + path.string());
    }

    png_init_io(png, f.get());
    png_read_info(png, info);

    // Normalize any input to 8-bit grayscale.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    height = static_cast<int>(png_get_image_height(png, info));
    width = static_cast<int>(png_get_image_width(png, info));
    std::vector<uint8_t> pixels(static_cast<size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        png_read_row(png, pixels.data() + static_cast<size_t>(y) * width, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

}  // namespace

void write_gray_png(const std::filesystem::path& path, const ImageF& img) {
    std::vector<uint8_t> bytes(img.numel());
    for (size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, img.v[i]));
        bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    write_rows(path, bytes, img.height, img.width);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<uint8_t> bytes(mask.numel());
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
    write_rows(path, bytes, mask.height, mask.width);
}

ImageF read_gray_png(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_rows(path, h, w);
    ImageF img(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) img.v[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

Mask read_mask_png(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_rows(path, h, w);
    Mask mask(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] == 0) {
            mask.v[i] = 0;
        } else if (bytes[i] == 255) {
            mask.v[i] = 1;
        } else {
            throw ValidationError("non-binary mask value " + std::to_string(bytes[i]) + " in " +
                                  path.string());
        }
    }
    return mask;
}

void write_gray8_png(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                     int height, int width) {
    write_rows(path, pixels, height, width);
}

}  // namespace screenseg
