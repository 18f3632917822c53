#include "mitunet/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mitunet {

HatchStyle hatch_style_from_string(const std::string& s) {
    if (s == "none") return HatchStyle::none;
    if (s == "diagonal") return HatchStyle::diagonal;
    if (s == "cross") return HatchStyle::cross;
    fail("unknown hatch style '" + s + "' (expected none|diagonal|cross)");
}

std::string hatch_style_name(HatchStyle h) {
    switch (h) {
        case HatchStyle::none: return "none";
        case HatchStyle::diagonal: return "diagonal";
        case HatchStyle::cross: return "cross";
    }
    return "?";
}

void PlanSpec::validate() const {
    check(thickness_min >= 2, "plan spec: wall thickness must be >= 2 px");
    check(thickness_min <= thickness_max, "plan spec: thickness range out of order");
    check(rooms_min >= 1 && rooms_min <= rooms_max, "plan spec: rooms range out of order");
    check(openings_min >= 0 && openings_min <= openings_max,
          "plan spec: openings range out of order");
    check(clutter_min >= 0 && clutter_min <= clutter_max,
          "plan spec: clutter range out of order");
    check(partition_fraction >= 0 && partition_fraction <= 1 && solid_fill_fraction >= 0 &&
              solid_fill_fraction <= 1 && non_manhattan_prob >= 0 && non_manhattan_prob <= 1,
          "plan spec: probability outside [0,1]");
    check(hatch_pitch >= 2, "plan spec: hatch pitch must be >= 2");
    // room cells must fit at least three max-thickness walls across
    check(canvas_side >= 6 * thickness_max + 8,
          "plan spec: canvas side " + std::to_string(canvas_side) +
              " too small for the room grid at thickness " + std::to_string(thickness_max));
}

namespace {

struct WallRect {
    long y0, x0, y1, x1;  // half-open
    bool horizontal;      // long axis along x
    bool hatched;
};

void set_px(Image& img, long y, long x, uint8_t v) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
    img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
}

// Rasterizes a wall rectangle: mask is always solid; the image gets either a
// solid fill or an outline with interior hatching (the texture/label
// divergence the segmenter must learn).
void render_wall(Image& img, Mask& mask, const WallRect& w, const PlanSpec& spec) {
    for (long y = w.y0; y < w.y1; ++y)
        for (long x = w.x0; x < w.x1; ++x) {
            if (y < 0 || y >= mask.height || x < 0 || x >= mask.width) continue;
            mask.at(y, x) = 1;
            bool edge = y == w.y0 || y == w.y1 - 1 || x == w.x0 || x == w.x1 - 1;
            bool ink;
            if (!w.hatched || spec.hatch == HatchStyle::none) {
                ink = true;
            } else {
                bool diag = (x + y) % spec.hatch_pitch == 0;
                bool anti = ((x - y) % spec.hatch_pitch + spec.hatch_pitch) % spec.hatch_pitch == 0;
                ink = edge || diag || (spec.hatch == HatchStyle::cross && anti);
            }
            if (ink) set_px(img, y, x, 0);
        }
}

// Thick segment stamped into both image and mask (exact ground truth).
void render_segment(Image& img, Mask& mask, double y0, double x0, double y1, double x1,
                    double thickness) {
    double r = thickness / 2.0;
    long ylo = long(std::floor(std::min(y0, y1) - r)), yhi = long(std::ceil(std::max(y0, y1) + r));
    long xlo = long(std::floor(std::min(x0, x1) - r)), xhi = long(std::ceil(std::max(x0, x1) + r));
    double dy = y1 - y0, dx = x1 - x0;
    double len2 = dy * dy + dx * dx;
    for (long y = std::max(0L, ylo); y <= std::min(mask.height - 1, yhi); ++y)
        for (long x = std::max(0L, xlo); x <= std::min(mask.width - 1, xhi); ++x) {
            double t = len2 > 0 ? ((double(y) - y0) * dy + (double(x) - x0) * dx) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            double py = y0 + t * dy, px = x0 + t * dx;
            double d2 = (double(y) - py) * (double(y) - py) + (double(x) - px) * (double(x) - px);
            if (d2 <= r * r) {
                mask.at(y, x) = 1;
                set_px(img, y, x, 0);
            }
        }
}

void carve_rect(Image& img, Mask& mask, Mask& opening, long y0, long x0, long y1, long x1) {
    for (long y = std::max(0L, y0); y < std::min(mask.height, y1); ++y)
        for (long x = std::max(0L, x0); x < std::min(mask.width, x1); ++x) {
            mask.at(y, x) = 0;
            opening.at(y, x) = 1;
            set_px(img, y, x, 255);
        }
}

}  // namespace

namespace {

PlanSample generate_plan_once(const PlanSpec& spec, uint64_t seed) {
    Rng rng(seed);
    long side = spec.canvas_side;
    PlanSample out;
    out.seed = seed;
    out.image = Image::filled(side, side, 255, 255, 255);
    out.wall = Mask::zeros(side, side);
    out.doors = Mask::zeros(side, side);
    out.windows = Mask::zeros(side, side);

    auto thickness = [&]() {
        return spec.thickness_min + long(rng.uniform_int(
                                        uint64_t(spec.thickness_max - spec.thickness_min + 1)));
    };

    // outer envelope with jittered margins
    long margin = side / 10 + long(rng.uniform_int(uint64_t(std::max(1L, side / 16))));
    long y0 = margin, x0 = margin, y1 = side - margin, x1 = side - margin;

    std::vector<WallRect> walls;
    long t_top = thickness(), t_bot = thickness(), t_left = thickness(), t_right = thickness();
    walls.push_back({y0, x0, y0 + t_top, x1, true, false});
    walls.push_back({y1 - t_bot, x0, y1, x1, true, false});
    walls.push_back({y0, x0, y1, x0 + t_left, false, false});
    walls.push_back({y0, x1 - t_right, y1, x1, false, false});

    // interior partition grid sized from the room budget
    long rooms = spec.rooms_min +
                 long(rng.uniform_int(uint64_t(spec.rooms_max - spec.rooms_min + 1)));
    long cols = rooms >= 4 ? 2 : (rooms >= 2 ? 1 + long(rng.uniform_int(2)) : 1);
    long rows = (rooms + cols - 1) / cols;
    long inner_w = x1 - x0, inner_h = y1 - y0;
    auto partitioned = [&]() {
        return rng.uniform() < spec.partition_fraction &&
               rng.uniform() >= spec.solid_fill_fraction;
    };
    for (long c = 1; c < cols; ++c) {
        long t = thickness();
        long px = x0 + c * inner_w / cols + long(rng.uniform_int(uint64_t(inner_w / 8 + 1))) -
                  inner_w / 16;
        walls.push_back({y0, px, y1, px + t, false, partitioned()});
    }
    for (long r = 1; r < rows; ++r) {
        long t = thickness();
        long py = y0 + r * inner_h / rows + long(rng.uniform_int(uint64_t(inner_h / 8 + 1))) -
                  inner_h / 16;
        walls.push_back({py, x0, py + t, x1, true, partitioned()});
    }
    for (const auto& w : walls) render_wall(out.image, out.wall, w, spec);

    // optional non-Manhattan feature: a polyline arc bay on the outer wall
    if (rng.uniform() < spec.non_manhattan_prob) {
        double cyc = double(y0 + t_top), cxc = double(x0 + inner_w / 2);
        double radius = double(inner_w) / 4.0 + rng.uniform(0.0, double(inner_w) / 8.0);
        double t = double(thickness());
        double a0 = M_PI, a1 = 2.0 * M_PI;
        const int segs = 8;
        for (int i = 0; i < segs; ++i) {
            double aa = a0 + (a1 - a0) * double(i) / segs;
            double ab = a0 + (a1 - a0) * double(i + 1) / segs;
            render_segment(out.image, out.wall, cyc + radius * std::sin(aa) * 0.4,
                           cxc + radius * std::cos(aa), cyc + radius * std::sin(ab) * 0.4,
                           cxc + radius * std::cos(ab), t);
        }
    }

    // openings carved through walls; alternate doors and windows
    long n_open = spec.openings_min +
                  long(rng.uniform_int(uint64_t(spec.openings_max - spec.openings_min + 1)));
    for (long i = 0; i < n_open; ++i) {
        const WallRect& w = walls[size_t(rng.uniform_int(walls.size()))];
        long len = w.horizontal ? w.x1 - w.x0 : w.y1 - w.y0;
        long width = std::max(3L, len / 8 + long(rng.uniform_int(uint64_t(len / 8 + 1))));
        if (width >= len) continue;  // opening must stay narrower than the wall run
        long off = long(rng.uniform_int(uint64_t(len - width)));
        Mask& target = (i % 2 == 0) ? out.doors : out.windows;
        if (w.horizontal)
            carve_rect(out.image, out.wall, target, w.y0, w.x0 + off, w.y1, w.x0 + off + width);
        else
            carve_rect(out.image, out.wall, target, w.y0 + off, w.x0, w.y0 + off + width, w.x1);
    }

    // clutter: furniture outlines, dimension lines, pseudo-text. Image only,
    // and never over wall-mask pixels, so the ground truth stays exact.
    auto clutter_px = [&](long y, long x, uint8_t v) {
        if (y < 0 || y >= side || x < 0 || x >= side) return;
        if (out.wall.at(y, x)) return;
        set_px(out.image, y, x, v);
    };
    long n_clutter = spec.clutter_min +
                     long(rng.uniform_int(uint64_t(spec.clutter_max - spec.clutter_min + 1)));
    for (long i = 0; i < n_clutter; ++i) {
        long kind = long(rng.uniform_int(3));
        long cy = long(rng.uniform_int(uint64_t(side)));
        long cx = long(rng.uniform_int(uint64_t(side)));
        uint8_t shade = uint8_t(60 + rng.uniform_int(120));
        if (kind == 0) {  // furniture rectangle outline
            long h = 3 + long(rng.uniform_int(uint64_t(side / 8)));
            long w = 3 + long(rng.uniform_int(uint64_t(side / 8)));
            for (long x = cx; x < cx + w; ++x) {
                clutter_px(cy, x, shade);
                clutter_px(cy + h - 1, x, shade);
            }
            for (long y = cy; y < cy + h; ++y) {
                clutter_px(y, cx, shade);
                clutter_px(y, cx + w - 1, shade);
            }
        } else if (kind == 1) {  // dimension line with end ticks
            long len = 4 + long(rng.uniform_int(uint64_t(side / 4)));
            bool horiz = rng.uniform() < 0.5;
            for (long j = 0; j < len; ++j)
                clutter_px(cy + (horiz ? 0 : j), cx + (horiz ? j : 0), shade);
            for (long j = -1; j <= 1; ++j) {
                clutter_px(cy + (horiz ? j : 0), cx + (horiz ? 0 : j), shade);
                clutter_px(cy + (horiz ? j : len - 1), cx + (horiz ? len - 1 : j), shade);
            }
        } else {  // pseudo-text: short dash run
            long dashes = 2 + long(rng.uniform_int(4));
            for (long d = 0; d < dashes; ++d)
                for (long j = 0; j < 2; ++j) clutter_px(cy, cx + d * 3 + j, shade);
        }
    }
    return out;
}

}  // namespace

PlanSample generate_plan(const PlanSpec& spec, uint64_t seed) {
    spec.validate();
    // Heavy thickness draws can push the wall class above the imbalance
    // regime; retry with thinner walls (still a pure function of spec+seed)
    // until the per-sample frequency stays below 25%.
    PlanSpec local = spec;
    for (int attempt = 0;; ++attempt) {
        uint64_t s = attempt == 0 ? seed : Rng::derive(seed, uint64_t(1000 + attempt));
        PlanSample p = generate_plan_once(local, s);
        p.seed = seed;  // record the caller's seed so generate_plan(spec, seed) reproduces it
        double freq = double(p.wall.count()) / double(p.wall.height * p.wall.width);
        if (freq <= 0.25 || attempt >= 6) return p;
        local.thickness_max = std::max(local.thickness_min, local.thickness_max - 1);
    }
}

SynthDataset make_dataset(const PlanSpec& spec, long n, uint64_t seed) {
    check(n >= 0, "make_dataset: n must be >= 0");
    SynthDataset ds;
    for (long i = 0; i < n; ++i) {
        uint64_t s = Rng::derive(seed, uint64_t(i));
        PlanSample p = generate_plan(spec, s);
        std::ostringstream rec;
        rec << i << " " << s << " canvas=" << spec.canvas_side
            << " hatch=" << hatch_style_name(spec.hatch) << " walls=" << p.wall.count()
            << " doors=" << p.doors.count() << " windows=" << p.windows.count();
        ds.manifest.push_back(rec.str());
        ds.samples.push_back(std::move(p));
    }
    return ds;
}

void save_dataset(const SynthDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    char name[64];
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const PlanSample& p = ds.samples[i];
        std::snprintf(name, sizeof name, "plan_%04zu", i);
        write_image(dir + "/" + name + ".png", p.image);
        write_mask(dir + "/" + name + "_mask.png", p.wall);
        write_mask(dir + "/" + name + "_doors.png", p.doors);
        write_mask(dir + "/" + name + "_windows.png", p.windows);
    }
    std::ofstream os(dir + "/manifest.txt");
    check(bool(os), "save_dataset: cannot write manifest in '" + dir + "'");
    for (const auto& line : ds.manifest) os << line << "\n";
}

SynthDataset load_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    check(bool(is), "load_dataset: cannot open '" + dir + "/manifest.txt'");
    SynthDataset ds;
    std::string line;
    char name[64];
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        size_t i = ds.samples.size();
        std::snprintf(name, sizeof name, "plan_%04zu", i);
        PlanSample p;
        p.image = read_image(dir + "/" + name + ".png");
        p.wall = read_mask(dir + "/" + name + "_mask.png");
        p.doors = read_mask(dir + "/" + name + "_doors.png");
        p.windows = read_mask(dir + "/" + name + "_windows.png");
        std::istringstream ls(line);
        long idx;
        ls >> idx >> p.seed;
        ds.manifest.push_back(line);
        ds.samples.push_back(std::move(p));
    }
    return ds;
}

}  // namespace mitunet
