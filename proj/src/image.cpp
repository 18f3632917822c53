#include "mitunet/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <cmath>
#include <algorithm>
#include <fstream>

namespace mitunet {

Image Image::filled(long h, long w, uint8_t r, uint8_t g, uint8_t b) {
    check(h > 0 && w > 0, "image: extents must be positive");
    Image img;
    img.height = h;
    img.width = w;
    img.pixels.resize(size_t(h * w * 3));
    for (long i = 0; i < h * w; ++i) {
        img.pixels[size_t(i * 3 + 0)] = r;
        img.pixels[size_t(i * 3 + 1)] = g;
        img.pixels[size_t(i * 3 + 2)] = b;
    }
    return img;
}

Mask Mask::zeros(long h, long w) {
    check(h > 0 && w > 0, "mask: extents must be positive");
    Mask m;
    m.height = h;
    m.width = w;
    m.bits.assign(size_t(h * w), 0);
    return m;
}

long Mask::count() const {
    long n = 0;
    for (uint8_t b : bits) n += b;
    return n;
}

void Mask::validate() const {
    check(height > 0 && width > 0, "mask: extents must be positive");
    check(long(bits.size()) == height * width, "mask: storage does not match extents");
    for (uint8_t b : bits)
        check(b == 0 || b == 1, "mask: values must be strictly binary");
}

namespace {

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// ---- portable anymap (P5 gray / P6 rgb), binary variants only ----

void pnm_skip_space(std::istream& is) {
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            return;
        }
    }
}

std::vector<uint8_t> read_pnm(const std::string& path, bool& is_rgb, long& h, long& w) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "image: cannot open '" + path + "'");
    std::string magic;
    is >> magic;
    check(magic == "P5" || magic == "P6", "image: '" + path + "' is not a binary PGM/PPM file");
    is_rgb = magic == "P6";
    long maxval = 0;
    pnm_skip_space(is);
    is >> w;
    pnm_skip_space(is);
    is >> h;
    pnm_skip_space(is);
    is >> maxval;
    check(bool(is) && w > 0 && h > 0, "image: malformed PNM header in '" + path + "'");
    check(maxval == 255, "image: only 8-bit PNM supported, got maxval " + std::to_string(maxval));
    is.get();  // single whitespace before payload
    std::vector<uint8_t> data(size_t(h * w * (is_rgb ? 3 : 1)));
    is.read(reinterpret_cast<char*>(data.data()), long(data.size()));
    check(bool(is), "image: truncated PNM payload in '" + path + "'");
    return data;
}

void write_pnm(const std::string& path, bool is_rgb, long h, long w,
               const std::vector<uint8_t>& data) {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "image: cannot open '" + path + "' for writing");
    os << (is_rgb ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(data.data()), long(data.size()));
    check(bool(os), "image: write to '" + path + "' failed");
}

// ---- PNG via libpng ----

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

std::vector<uint8_t> read_png(const std::string& path, long& h, long& w) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    check(f != nullptr, "image: cannot open '" + path + "'");
    FileCloser closer{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "image: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("image: failed to decode PNG '" + path + "'");
    }
    png_init_io(png, f);
    png_read_info(png, info);
    w = long(png_get_image_width(png, info));
    h = long(png_get_image_height(png, info));
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    check(png_get_rowbytes(png, info) == size_t(w * 3), "image: unexpected PNG row layout");
    std::vector<uint8_t> data(size_t(h * w * 3));
    std::vector<png_bytep> rows(size_t(h), nullptr);
    for (long y = 0; y < h; ++y) rows[size_t(y)] = data.data() + y * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

void write_png(const std::string& path, long h, long w, const std::vector<uint8_t>& rgb) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    check(f != nullptr, "image: cannot open '" + path + "' for writing");
    FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "image: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("image: failed to encode PNG '" + path + "'");
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(size_t(h), nullptr);
    for (long y = 0; y < h; ++y)
        rows[size_t(y)] = const_cast<png_bytep>(rgb.data() + y * w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const std::string& path) {
    Image img;
    if (ends_with(path, ".pgm") || ends_with(path, ".ppm")) {
        bool rgb = false;
        auto data = read_pnm(path, rgb, img.height, img.width);
        if (rgb) {
            img.pixels = std::move(data);
        } else {
            img.pixels.resize(data.size() * 3);
            for (size_t i = 0; i < data.size(); ++i)
                img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = data[i];
        }
    } else {
        img.pixels = read_png(path, img.height, img.width);
    }
    return img;
}

void write_image(const std::string& path, const Image& img) {
    check(long(img.pixels.size()) == img.height * img.width * 3,
          "image: storage does not match extents");
    if (ends_with(path, ".ppm"))
        write_pnm(path, true, img.height, img.width, img.pixels);
    else
        write_png(path, img.height, img.width, img.pixels);
}

Mask read_mask(const std::string& path) {
    Image img = read_image(path);
    Mask m = Mask::zeros(img.height, img.width);
    for (long i = 0; i < img.height * img.width; ++i) {
        uint8_t v = img.pixels[size_t(i * 3)];
        check(v == 0 || v == 255,
              "mask: '" + path + "' must hold only 0 or 255, found " + std::to_string(int(v)));
        m.bits[size_t(i)] = v ? 1 : 0;
    }
    return m;
}

void write_mask(const std::string& path, const Mask& mask) {
    mask.validate();
    if (ends_with(path, ".pgm")) {
        std::vector<uint8_t> gray(mask.bits.size());
        for (size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits[i] ? 255 : 0;
        write_pnm(path, false, mask.height, mask.width, gray);
        return;
    }
    Image img = Image::filled(mask.height, mask.width, 0, 0, 0);
    for (size_t i = 0; i < mask.bits.size(); ++i) {
        uint8_t v = mask.bits[i] ? 255 : 0;
        img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = v;
    }
    write_png(path, mask.height, mask.width, img.pixels);
}

Image overlay_mask(const Image& img, const Mask& mask, double alpha) {
    check(img.height == mask.height && img.width == mask.width,
          "overlay: image and mask extents differ");
    Image out = img;
    for (long i = 0; i < img.height * img.width; ++i) {
        if (!mask.bits[size_t(i)]) continue;
        auto blend = [&](long c, double target) {
            double v = (1.0 - alpha) * img.pixels[size_t(i * 3 + c)] + alpha * target;
            out.pixels[size_t(i * 3 + c)] = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        };
        blend(0, 255.0);
        blend(1, 0.0);
        blend(2, 0.0);
    }
    return out;
}

}  // namespace mitunet
