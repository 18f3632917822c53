#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mitunet/common.hpp"

namespace mitunet {

// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
    long height = 0, width = 0;
    std::vector<uint8_t> pixels;  // height * width * 3

    static Image filled(long h, long w, uint8_t r, uint8_t g, uint8_t b);
    uint8_t& at(long y, long x, long c) { return pixels[size_t((y * width + x) * 3 + c)]; }
    uint8_t at(long y, long x, long c) const { return pixels[size_t((y * width + x) * 3 + c)]; }
    bool operator==(const Image&) const = default;
};

// Binary mask, one byte per pixel, values strictly 0 or 1.
struct Mask {
    long height = 0, width = 0;
    std::vector<uint8_t> bits;  // height * width

    static Mask zeros(long h, long w);
    uint8_t& at(long y, long x) { return bits[size_t(y * width + x)]; }
    uint8_t at(long y, long x) const { return bits[size_t(y * width + x)]; }
    long count() const;
    void validate() const;  // extents match storage, values binary
    bool operator==(const Mask&) const = default;
};

// PNG via libpng; .pgm/.ppm via the built-in portable-anymap codec.
// Mask files hold 0 for background and 255 for foreground.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);
Mask read_mask(const std::string& path);
void write_mask(const std::string& path, const Mask& mask);

// Mask alpha-blended red over the input, for manual inspection.
Image overlay_mask(const Image& img, const Mask& mask, double alpha = 0.5);

}  // namespace mitunet
