#include "mitunet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace mitunet {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (msb = leftmost column).
const std::map<char, std::array<uint8_t, 7>>& font() {
    static const std::map<char, std::array<uint8_t, 7>> f = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'/', {0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
}

void set_px(Image& img, long y, long x, uint8_t r, uint8_t g, uint8_t b) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
}

void draw_line(Image& img, long y0, long x0, long y1, long x1, uint8_t r, uint8_t g, uint8_t b) {
    long dy = std::abs(y1 - y0), dx = std::abs(x1 - x0);
    long steps = std::max({dy, dx, 1L});
    for (long i = 0; i <= steps; ++i) {
        long y = y0 + (y1 - y0) * i / steps;
        long x = x0 + (x1 - x0) * i / steps;
        set_px(img, y, x, r, g, b);
    }
}

void draw_dot(Image& img, long y, long x, uint8_t r, uint8_t g, uint8_t b) {
    for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) set_px(img, y + dy, x + dx, r, g, b);
}

}  // namespace

void draw_text(Image& img, long y, long x, const std::string& text, uint8_t r, uint8_t g,
               uint8_t b, long scale) {
    const auto& f = font();
    long cx = x;
    for (char raw : text) {
        char c = char(std::toupper(static_cast<unsigned char>(raw)));
        auto it = f.find(c);
        const std::array<uint8_t, 7>& rows =
            it != f.end() ? it->second : f.at('-');  // unknown glyphs draw as a dash
        for (long gy = 0; gy < 7; ++gy)
            for (long gx = 0; gx < 5; ++gx)
                if (rows[size_t(gy)] & (0x10 >> gx))
                    for (long sy = 0; sy < scale; ++sy)
                        for (long sx = 0; sx < scale; ++sx)
                            set_px(img, y + gy * scale + sy, cx + gx * scale + sx, r, g, b);
        cx += 6 * scale;
    }
}

std::string format_report_table(const std::vector<AblationRow>& rows) {
    std::vector<AblationRow> sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(), [](const AblationRow& a, const AblationRow& b) {
        return a.metrics.miou > b.metrics.miou;
    });
    std::ostringstream os;
    char buf[160];
    os << "Loss (a / b)         | Recall (%) | Precision (%) | Accuracy (%) | mIoU (%)\n";
    os << "---------------------+------------+---------------+--------------+---------\n";
    for (const auto& r : sorted) {
        char label[32];
        std::snprintf(label, sizeof label, "Tversky (%.1f / %.1f)", r.alpha, r.beta);
        std::snprintf(buf, sizeof buf, "%-21s| %10.2f | %13.2f | %12.2f | %8.2f\n", label,
                      r.metrics.recall, r.metrics.precision, r.metrics.accuracy, r.metrics.miou);
        os << buf;
    }
    return os.str();
}

Image render_trend_plot(const std::vector<AblationRow>& rows) {
    const long W = 480, H = 320;
    const long mx0 = 60, mx1 = 20, my0 = 40, my1 = 40;  // margins: left/right/top/bottom
    Image img = Image::filled(H, W, 255, 255, 255);

    long px0 = mx0, px1 = W - mx1, py0 = my0, py1 = H - my1;
    draw_line(img, py1, px0, py1, px1, 0, 0, 0);  // x axis
    draw_line(img, py0, px0, py1, px0, 0, 0, 0);  // y axis
    draw_text(img, py1 + 20, (px0 + px1) / 2 - 15, "ALPHA", 0, 0, 0);
    draw_text(img, py0 - 25, px0 - 40, "PERCENT", 0, 0, 0);
    draw_text(img, 8, px0, "PRECISION AND RECALL VS ALPHA", 0, 0, 0);

    if (!rows.empty()) {
        double amin = rows.front().alpha, amax = rows.front().alpha;
        for (const auto& r : rows) {
            amin = std::min(amin, r.alpha);
            amax = std::max(amax, r.alpha);
        }
        if (amax <= amin) amax = amin + 1.0;
        auto xo = [&](double a) {
            return px0 + long(std::lround((a - amin) / (amax - amin) * double(px1 - px0)));
        };
        auto yo = [&](double pct) {
            return py1 - long(std::lround(pct / 100.0 * double(py1 - py0)));
        };
        // y gridlines each 20%
        for (long pct = 0; pct <= 100; pct += 20) {
            long y = yo(double(pct));
            draw_line(img, y, px0 - 3, y, px0, 0, 0, 0);
            char lab[8];
            std::snprintf(lab, sizeof lab, "%ld", pct);
            draw_text(img, y - 3, px0 - 30, lab, 0, 0, 0);
        }
        for (const auto& r : rows) {
            char lab[16];
            std::snprintf(lab, sizeof lab, "%.1f", r.alpha);
            draw_text(img, py1 + 6, xo(r.alpha) - 8, lab, 0, 0, 0);
        }
        auto polyline = [&](bool use_precision, uint8_t r, uint8_t g, uint8_t b) {
            for (size_t i = 0; i < rows.size(); ++i) {
                double v = use_precision ? rows[i].metrics.precision : rows[i].metrics.recall;
                long y = yo(v), x = xo(rows[i].alpha);
                draw_dot(img, y, x, r, g, b);
                if (i > 0) {
                    double pv = use_precision ? rows[i - 1].metrics.precision
                                              : rows[i - 1].metrics.recall;
                    draw_line(img, yo(pv), xo(rows[i - 1].alpha), y, x, r, g, b);
                }
            }
        };
        polyline(true, 200, 40, 40);
        polyline(false, 40, 40, 200);
    }
    draw_text(img, py0, px1 - 110, "PRECISION", 200, 40, 40);
    draw_text(img, py0 + 12, px1 - 110, "RECALL", 40, 40, 200);
    return img;
}

uint64_t image_hash(const Image& img) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(uint64_t(img.height));
    mix(uint64_t(img.width));
    for (uint8_t p : img.pixels) {
        h ^= p;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace mitunet
