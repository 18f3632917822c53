#include "mitunet/morphology.hpp"

namespace mitunet {

namespace {

// Separable sliding-window max (dilate) or min (erode) with a square element.
Mask window_pass(const Mask& m, int radius, bool take_max, uint8_t border) {
    Mask mid = Mask::zeros(m.height, m.width);
    auto combine = [&](uint8_t acc, uint8_t v) {
        return take_max ? std::max(acc, v) : std::min(acc, v);
    };
    for (long y = 0; y < m.height; ++y)
        for (long x = 0; x < m.width; ++x) {
            uint8_t acc = border;
            for (long dx = -radius; dx <= radius; ++dx) {
                long xx = x + dx;
                uint8_t v = (xx >= 0 && xx < m.width) ? m.at(y, xx) : border;
                acc = combine(acc, v);
            }
            mid.at(y, x) = acc;
        }
    Mask out = Mask::zeros(m.height, m.width);
    for (long y = 0; y < m.height; ++y)
        for (long x = 0; x < m.width; ++x) {
            uint8_t acc = border;
            for (long dy = -radius; dy <= radius; ++dy) {
                long yy = y + dy;
                uint8_t v = (yy >= 0 && yy < m.height) ? mid.at(yy, x) : border;
                acc = combine(acc, v);
            }
            out.at(y, x) = acc;
        }
    return out;
}

void check_pair(const Mask& a, const Mask& b, const char* what) {
    a.validate();
    b.validate();
    check(a.height == b.height && a.width == b.width,
          std::string(what) + ": mask extents differ (" + std::to_string(a.height) + "x" +
              std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
              std::to_string(b.width) + ")");
}

}  // namespace

Mask dilate(const Mask& m, int radius_px) {
    m.validate();
    check(radius_px >= 0, "dilate: radius must be >= 0");
    if (radius_px == 0) return m;
    return window_pass(m, radius_px, true, 0);
}

Mask erode(const Mask& m, int radius_px) {
    m.validate();
    check(radius_px >= 0, "erode: radius must be >= 0");
    if (radius_px == 0) return m;
    // Erosion pads with foreground, the dual of dilation's background
    // padding, so erode(invert(m)) == invert(dilate(m)) holds exactly and
    // frame-touching strokes are not eaten by the closing step.
    return window_pass(m, radius_px, false, 1);
}

Mask closing(const Mask& m, int kernel_side) {
    check(kernel_side >= 1 && kernel_side % 2 == 1,
          "closing: kernel side must be odd and positive, got " + std::to_string(kernel_side));
    int r = (kernel_side - 1) / 2;
    return erode(dilate(m, r), r);
}

Mask mask_union(const Mask& a, const Mask& b) {
    check_pair(a, b, "mask_union");
    Mask out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
    return out;
}

Mask mask_subtract(const Mask& a, const Mask& b) {
    check_pair(a, b, "mask_subtract");
    Mask out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] & uint8_t(1 - b.bits[i]);
    return out;
}

Mask mask_invert(const Mask& m) {
    m.validate();
    Mask out = m;
    for (auto& b : out.bits) b = uint8_t(1 - b);
    return out;
}

Mask refine_annotation(const Mask& wall, const Mask& doors, const Mask& windows, int dilate_px,
                       int close_kernel) {
    check_pair(wall, doors, "refine_annotation");
    check_pair(wall, windows, "refine_annotation");
    Mask openings = dilate(mask_union(doors, windows), dilate_px);
    return closing(mask_subtract(wall, openings), close_kernel);
}

}  // namespace mitunet
