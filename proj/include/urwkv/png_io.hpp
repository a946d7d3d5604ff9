#pragma once

#include <cstdio>
#include <memory>

#include <png.h>

#include "urwkv/common.hpp"

namespace urwkv {

struct GrayImage {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> data;  // row-major
};

inline void write_gray_png(const std::string& path, const GrayImage& img) {
    check(static_cast<std::int64_t>(img.data.size()) == img.h * img.w, "write_gray_png: bad image extents");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    check(fp != nullptr, "write_gray_png: cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        fail("write_gray_png: libpng failure for '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t y = 0; y < img.h; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.data.data() + y * img.w));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// Reads any 8/16-bit gray/rgb/palette PNG as 8-bit grayscale.
inline GrayImage read_gray_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    check(fp != nullptr, "read_gray_png: cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        fail("read_gray_png: libpng failure for '" + path + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    GrayImage img;
    img.w = static_cast<std::int64_t>(png_get_image_width(png, info));
    img.h = static_cast<std::int64_t>(png_get_image_height(png, info));
    img.data.resize(static_cast<std::size_t>(img.h * img.w));
    for (std::int64_t y = 0; y < img.h; ++y) {
        png_read_row(png, img.data.data() + y * img.w, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

}  // namespace urwkv
