#include "mitunet/augment.hpp"

#include <algorithm>
#include <cmath>

namespace mitunet {

namespace {

constexpr uint8_t kPaperWhite = 255;

void check_finite(std::initializer_list<double> vals, const char* what) {
    for (double v : vals)
        check(std::isfinite(v), std::string(what) + ": non-finite parameter");
}

void check_sample(const Sample& s, const char* what) {
    s.mask.validate();
    check(s.image.height == s.mask.height && s.image.width == s.mask.width,
          std::string(what) + ": image and mask extents differ");
}

double sample_bilinear(const Image& img, double sy, double sx, long c) {
    long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
    double fy = sy - double(y0), fx = sx - double(x0);
    auto tap = [&](long y, long x) -> double {
        if (y < 0 || y >= img.height || x < 0 || x >= img.width) return double(kPaperWhite);
        return double(img.at(y, x, c));
    };
    double top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx;
    double bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx;
    return top * (1 - fy) + bot * fy;
}

uint8_t sample_nearest(const Mask& m, double sy, double sx) {
    long y = long(std::floor(sy + 0.5)), x = long(std::floor(sx + 0.5));
    if (y < 0 || y >= m.height || x < 0 || x >= m.width) return 0;
    return m.at(y, x);
}

// Applies an inverse map (destination pixel -> source coordinates) to both
// layers of a sample.
template <class MapFn>
Sample warp(const Sample& s, MapFn&& src_of) {
    Sample out;
    out.image = Image::filled(s.image.height, s.image.width, 0, 0, 0);
    out.mask = Mask::zeros(s.mask.height, s.mask.width);
    for (long y = 0; y < s.image.height; ++y)
        for (long x = 0; x < s.image.width; ++x) {
            auto [sy, sx] = src_of(double(y), double(x));
            for (long c = 0; c < 3; ++c)
                out.image.at(y, x, c) =
                    uint8_t(std::lround(std::clamp(sample_bilinear(s.image, sy, sx, c), 0.0, 255.0)));
            out.mask.at(y, x) = sample_nearest(s.mask, sy, sx);
        }
    return out;
}

// Separable gaussian blur of a scalar field, truncated at 3 sigma.
void gaussian_blur_field(std::vector<double>& f, long h, long w, double sigma) {
    long r = std::max(1L, long(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(size_t(2 * r + 1), 0.0);
    double norm = 0;
    for (long i = -r; i <= r; ++i) {
        kernel[size_t(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
        norm += kernel[size_t(i + r)];
    }
    for (auto& k : kernel) k /= norm;
    std::vector<double> tmp(f.size(), 0.0);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0;
            for (long i = -r; i <= r; ++i) {
                long xx = std::clamp(x + i, 0L, w - 1);
                acc += kernel[size_t(i + r)] * f[size_t(y * w + xx)];
            }
            tmp[size_t(y * w + x)] = acc;
        }
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0;
            for (long i = -r; i <= r; ++i) {
                long yy = std::clamp(y + i, 0L, h - 1);
                acc += kernel[size_t(i + r)] * tmp[size_t(yy * w + x)];
            }
            f[size_t(y * w + x)] = acc;
        }
}

// Homography h (row-major 3x3) mapping destination -> source.
std::array<double, 9> solve_homography(const std::array<double, 8>& dst,
                                       const std::array<double, 8>& src) {
    // Eight equations in the eight unknowns of h (h22 = 1), Gaussian
    // elimination with partial pivoting.
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        double X = dst[size_t(2 * i)], Y = dst[size_t(2 * i + 1)];
        double u = src[size_t(2 * i)], v = src[size_t(2 * i + 1)];
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = X; r0[1] = Y; r0[2] = 1; r0[6] = -X * u; r0[7] = -Y * u; r0[8] = u;
        r1[3] = X; r1[4] = Y; r1[5] = 1; r1[6] = -X * v; r1[7] = -Y * v; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        check(std::abs(a[piv][col]) > 1e-12, "perspective: degenerate corner placement");
        if (piv != col)
            for (int k = 0; k < 9; ++k) std::swap(a[piv][k], a[col][k]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
        }
    }
    std::array<double, 9> h{};
    for (int i = 0; i < 8; ++i) h[size_t(i)] = a[i][8] / a[i][i];
    h[8] = 1.0;
    return h;
}

double luminance(const Image& img, long i) {
    return 0.299 * img.pixels[size_t(i * 3)] + 0.587 * img.pixels[size_t(i * 3 + 1)] +
           0.114 * img.pixels[size_t(i * 3 + 2)];
}

}  // namespace

void AugmentConfig::validate() const {
    for (double p : {p_affine, p_perspective, p_elastic, p_grid, p_brightness_contrast, p_clahe,
                     p_noise})
        check(p >= 0.0 && p <= 1.0, "augment config: probability outside [0,1]");
    check(scale_min <= scale_max && rotate_min_deg <= rotate_max_deg &&
              noise_sigma_min <= noise_sigma_max && iso_intensity_min <= iso_intensity_max &&
              iso_color_shift_min <= iso_color_shift_max,
          "augment config: range bounds out of order");
    check(translate_frac >= 0 && perspective_jitter >= 0 && grid_magnitude >= 0,
          "augment config: negative magnitude");
    check(grid_cells >= 1 && clahe_tiles >= 1, "augment config: non-positive grid extents");
    for (double v : norm_std) check(v > 0, "augment config: non-positive normalization std");
}

Sample affine(const Sample& s, double scale, double angle_deg, double tx, double ty) {
    check_sample(s, "affine");
    check_finite({scale, angle_deg, tx, ty}, "affine");
    check(scale > 0, "affine: scale must be positive");
    double cy = double(s.image.height - 1) / 2.0, cx = double(s.image.width - 1) / 2.0;
    double th = angle_deg * M_PI / 180.0;
    double c = std::cos(th), sn = std::sin(th);
    // inverse of: rotate by th, scale, translate by (tx, ty), all about center
    return warp(s, [=](double y, double x) {
        double dy = y - cy - ty, dx = x - cx - tx;
        double sy = (c * dy - sn * dx) / scale + cy;
        double sx = (sn * dy + c * dx) / scale + cx;
        return std::pair<double, double>(sy, sx);
    });
}

Sample perspective(const Sample& s, const std::array<double, 8>& corner_offsets) {
    check_sample(s, "perspective");
    for (double v : corner_offsets) check(std::isfinite(v), "perspective: non-finite parameter");
    double H = double(s.image.height - 1), W = double(s.image.width - 1);
    // destination corners fixed; source corners jittered (x,y order:
    // tl, tr, br, bl), offsets in pixels
    std::array<double, 8> dst = {0, 0, W, 0, W, H, 0, H};
    std::array<double, 8> src = dst;
    for (int i = 0; i < 8; ++i) src[size_t(i)] += corner_offsets[size_t(i)];
    auto h = solve_homography(dst, src);
    return warp(s, [=](double y, double x) {
        double w = h[6] * x + h[7] * y + h[8];
        double u = (h[0] * x + h[1] * y + h[2]) / w;
        double v = (h[3] * x + h[4] * y + h[5]) / w;
        return std::pair<double, double>(v, u);
    });
}

Sample elastic(const Sample& s, double alpha, double sigma, uint64_t field_seed) {
    check_sample(s, "elastic");
    check_finite({alpha, sigma}, "elastic");
    check(sigma > 0, "elastic: sigma must be positive");
    long h = s.image.height, w = s.image.width;
    Rng rng(field_seed);
    std::vector<double> dy(size_t(h * w), 0.0), dx(size_t(h * w), 0.0);
    for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
    for (auto& v : dx) v = rng.uniform(-1.0, 1.0);
    gaussian_blur_field(dy, h, w, sigma);
    gaussian_blur_field(dx, h, w, sigma);
    return warp(s, [&, alpha](double y, double x) {
        size_t i = size_t(long(y) * w + long(x));
        return std::pair<double, double>(y + alpha * dy[i], x + alpha * dx[i]);
    });
}

Sample grid_distort(const Sample& s, long cells, double magnitude, uint64_t node_seed) {
    check_sample(s, "grid_distort");
    check_finite({magnitude}, "grid_distort");
    check(cells >= 1, "grid_distort: cells must be >= 1");
    long h = s.image.height, w = s.image.width;
    long nodes = cells + 1;
    double cell_h = double(h - 1) / double(cells), cell_w = double(w - 1) / double(cells);
    Rng rng(node_seed);
    // displacement at each grid node; border nodes stay pinned so the frame
    // does not tear
    std::vector<double> ndy(size_t(nodes * nodes), 0.0), ndx(size_t(nodes * nodes), 0.0);
    for (long gy = 0; gy < nodes; ++gy)
        for (long gx = 0; gx < nodes; ++gx) {
            double jy = rng.uniform(-1.0, 1.0) * magnitude * cell_h;
            double jx = rng.uniform(-1.0, 1.0) * magnitude * cell_w;
            if (gy > 0 && gy < nodes - 1 && gx > 0 && gx < nodes - 1) {
                ndy[size_t(gy * nodes + gx)] = jy;
                ndx[size_t(gy * nodes + gx)] = jx;
            }
        }
    return warp(s, [&](double y, double x) {
        double gy = y / cell_h, gx = x / cell_w;
        long iy = std::min(long(gy), cells - 1), ix = std::min(long(gx), cells - 1);
        double fy = gy - double(iy), fx = gx - double(ix);
        auto node = [&](long ny, long nx, const std::vector<double>& f) {
            return f[size_t(ny * nodes + nx)];
        };
        double ddy = (1 - fy) * ((1 - fx) * node(iy, ix, ndy) + fx * node(iy, ix + 1, ndy)) +
                     fy * ((1 - fx) * node(iy + 1, ix, ndy) + fx * node(iy + 1, ix + 1, ndy));
        double ddx = (1 - fy) * ((1 - fx) * node(iy, ix, ndx) + fx * node(iy, ix + 1, ndx)) +
                     fy * ((1 - fx) * node(iy + 1, ix, ndx) + fx * node(iy + 1, ix + 1, ndx));
        return std::pair<double, double>(y + ddy, x + ddx);
    });
}

Image brightness_contrast(const Image& img, double delta_b, double delta_c) {
    check_finite({delta_b, delta_c}, "brightness_contrast");
    Image out = img;
    double gain = 1.0 + delta_c;
    double bias = delta_b * 255.0;
    for (auto& p : out.pixels)
        p = uint8_t(std::lround(std::clamp((double(p) - 128.0) * gain + 128.0 + bias, 0.0, 255.0)));
    return out;
}

Image clahe(const Image& img, double clip_limit, long tile_grid) {
    check(clip_limit >= 1.0, "clahe: clip limit must be >= 1");
    check(tile_grid >= 1, "clahe: tile grid must be >= 1");
    long h = img.height, w = img.width;
    long tiles = tile_grid;
    // per-tile clipped-histogram equalization mapping on the luminance channel
    std::vector<std::array<double, 256>> mapping(size_t(tiles * tiles));
    for (long ty = 0; ty < tiles; ++ty)
        for (long tx = 0; tx < tiles; ++tx) {
            long y0 = ty * h / tiles, y1 = (ty + 1) * h / tiles;
            long x0 = tx * w / tiles, x1 = (tx + 1) * w / tiles;
            long npix = std::max(1L, (y1 - y0) * (x1 - x0));
            std::array<double, 256> hist{};
            for (long y = y0; y < y1; ++y)
                for (long x = x0; x < x1; ++x)
                    hist[size_t(std::lround(std::clamp(luminance(img, y * w + x), 0.0, 255.0)))] +=
                        1.0;
            double clip = clip_limit * double(npix) / 256.0;
            double excess = 0;
            for (auto& b : hist)
                if (b > clip) {
                    excess += b - clip;
                    b = clip;
                }
            for (auto& b : hist) b += excess / 256.0;
            double cum = 0;
            auto& map = mapping[size_t(ty * tiles + tx)];
            for (int i = 0; i < 256; ++i) {
                cum += hist[size_t(i)];
                map[size_t(i)] = 255.0 * cum / double(npix);
            }
        }
    Image out = img;
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double lum = std::clamp(luminance(img, y * w + x), 0.0, 255.0);
            int bin = int(std::lround(lum));
            // bilinear blend between the four surrounding tile mappings
            double gy = (double(y) + 0.5) * double(tiles) / double(h) - 0.5;
            double gx = (double(x) + 0.5) * double(tiles) / double(w) - 0.5;
            long ty0 = std::clamp(long(std::floor(gy)), 0L, tiles - 1);
            long tx0 = std::clamp(long(std::floor(gx)), 0L, tiles - 1);
            long ty1 = std::min(ty0 + 1, tiles - 1), tx1 = std::min(tx0 + 1, tiles - 1);
            double fy = std::clamp(gy - double(ty0), 0.0, 1.0);
            double fx = std::clamp(gx - double(tx0), 0.0, 1.0);
            auto m = [&](long a, long b) { return mapping[size_t(a * tiles + b)][size_t(bin)]; };
            double mapped = (1 - fy) * ((1 - fx) * m(ty0, tx0) + fx * m(ty0, tx1)) +
                            fy * ((1 - fx) * m(ty1, tx0) + fx * m(ty1, tx1));
            double gain = lum > 0.5 ? mapped / lum : 1.0;
            for (long c = 0; c < 3; ++c) {
                double v = double(img.at(y, x, c)) * gain;
                out.at(y, x, c) = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return out;
}

Image gaussian_noise(const Image& img, double sigma, uint64_t seed) {
    check(sigma >= 0, "gaussian_noise: sigma must be >= 0");
    Rng rng(seed);
    Image out = img;
    for (auto& p : out.pixels)
        p = uint8_t(std::lround(std::clamp(double(p) + rng.normal(0.0, sigma), 0.0, 255.0)));
    return out;
}

Image iso_noise(const Image& img, double color_shift, double intensity, uint64_t seed) {
    check(color_shift >= 0 && intensity >= 0, "iso_noise: parameters must be >= 0");
    Rng rng(seed);
    Image out = img;
    for (long i = 0; i < img.height * img.width; ++i) {
        // shot noise scales with sqrt of the signal, plus an independent
        // per-channel color cast
        double lum = luminance(img, i);
        double shot = rng.normal(0.0, intensity * std::sqrt(std::max(lum, 1.0)));
        for (long c = 0; c < 3; ++c) {
            double cast = rng.normal(0.0, color_shift * 255.0);
            double v = double(img.pixels[size_t(i * 3 + c)]) + shot + cast;
            out.pixels[size_t(i * 3 + c)] = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

Sample resize_to_training(const Sample& s, long side) {
    check_sample(s, "resize_to_training");
    check(side >= 1, "resize_to_training: side must be positive");
    long h = s.image.height, w = s.image.width;
    Sample square = s;
    if (h != w) {
        long sq = std::max(h, w);
        square.image = Image::filled(sq, sq, kPaperWhite, kPaperWhite, kPaperWhite);
        square.mask = Mask::zeros(sq, sq);
        long oy = (sq - h) / 2, ox = (sq - w) / 2;
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                for (long c = 0; c < 3; ++c)
                    square.image.at(y + oy, x + ox, c) = s.image.at(y, x, c);
                square.mask.at(y + oy, x + ox) = s.mask.at(y, x);
            }
    }
    if (square.image.height == side) return square;
    long sq = square.image.height;
    Sample out;
    out.image = Image::filled(side, side, 0, 0, 0);
    out.mask = Mask::zeros(side, side);
    double scale = double(sq) / double(side);
    for (long y = 0; y < side; ++y)
        for (long x = 0; x < side; ++x) {
            double sy = (double(y) + 0.5) * scale - 0.5;
            double sx = (double(x) + 0.5) * scale - 0.5;
            for (long c = 0; c < 3; ++c)
                out.image.at(y, x, c) = uint8_t(
                    std::lround(std::clamp(sample_bilinear(square.image, sy, sx, c), 0.0, 255.0)));
            out.mask.at(y, x) = sample_nearest(square.mask, sy, sx);
        }
    return out;
}

Tensor<float> normalize(const Image& img, const AugmentConfig& cfg) {
    cfg.validate();
    long h = img.height, w = img.width;
    std::vector<float> data(size_t(3 * h * w), 0.f);
    for (long c = 0; c < 3; ++c)
        for (long i = 0; i < h * w; ++i)
            data[size_t(c * h * w + i)] =
                float((double(img.pixels[size_t(i * 3 + c)]) / 255.0 - cfg.norm_mean[size_t(c)]) /
                      cfg.norm_std[size_t(c)]);
    return Tensor<float>::from({3, h, w}, std::move(data));
}

Image denormalize(const Tensor<float>& t, const AugmentConfig& cfg) {
    check(t.rank() == 3 && t.dim(0) == 3, "denormalize: expected [3,H,W] tensor");
    long h = t.dim(1), w = t.dim(2);
    Image img = Image::filled(h, w, 0, 0, 0);
    for (long c = 0; c < 3; ++c)
        for (long i = 0; i < h * w; ++i) {
            double v = (double(t.data()[size_t(c * h * w + i)]) * cfg.norm_std[size_t(c)] +
                        cfg.norm_mean[size_t(c)]) *
                       255.0;
            img.pixels[size_t(i * 3 + c)] = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    return img;
}

Sample augment_pipeline(const Sample& s, const AugmentConfig& cfg, uint64_t seed) {
    cfg.validate();
    check_sample(s, "augment_pipeline");
    Rng rng(seed);
    Sample out = s;

    // geometric group
    if (rng.uniform() < cfg.p_affine) {
        double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
        double angle = rng.uniform(cfg.rotate_min_deg, cfg.rotate_max_deg);
        double tmax = cfg.translate_frac * double(s.image.width);
        double tx = rng.uniform(-tmax, tmax), ty = rng.uniform(-tmax, tmax);
        out = affine(out, scale, angle, tx, ty);
    }
    if (rng.uniform() < cfg.p_perspective) {
        std::array<double, 8> off{};
        double jmax = cfg.perspective_jitter * double(s.image.width);
        for (auto& v : off) v = rng.uniform(-jmax, jmax);
        out = perspective(out, off);
    }
    if (rng.uniform() < cfg.p_elastic)
        out = elastic(out, cfg.elastic_alpha, cfg.elastic_sigma, rng.next_u64());
    if (rng.uniform() < cfg.p_grid)
        out = grid_distort(out, cfg.grid_cells, cfg.grid_magnitude, rng.next_u64());

    // photometric group
    if (rng.uniform() < cfg.p_brightness_contrast) {
        double db = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
        double dc = rng.uniform(-cfg.contrast_limit, cfg.contrast_limit);
        out.image = brightness_contrast(out.image, db, dc);
    }
    if (rng.uniform() < cfg.p_clahe)
        out.image = clahe(out.image, cfg.clahe_clip, cfg.clahe_tiles);

    // noise group: gaussian or iso, an even coin between them
    if (rng.uniform() < cfg.p_noise) {
        if (rng.uniform() < 0.5) {
            out.image = gaussian_noise(
                out.image, rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max), rng.next_u64());
        } else {
            out.image = iso_noise(out.image,
                                  rng.uniform(cfg.iso_color_shift_min, cfg.iso_color_shift_max),
                                  rng.uniform(cfg.iso_intensity_min, cfg.iso_intensity_max),
                                  rng.next_u64());
        }
    }
    return out;
}

}  // namespace mitunet
