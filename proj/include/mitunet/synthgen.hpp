#pragma once

#include "mitunet/augment.hpp"
#include "mitunet/image.hpp"
#include "mitunet/rng.hpp"

namespace mitunet {

enum class HatchStyle { none, diagonal, cross };

HatchStyle hatch_style_from_string(const std::string& s);
std::string hatch_style_name(HatchStyle h);

struct PlanSpec {
    long canvas_side = 64;
    long rooms_min = 2, rooms_max = 5;       // total rooms in the partition grid
    long thickness_min = 2, thickness_max = 6;
    double partition_fraction = 0.5;         // chance an interior wall is drawn hatched
    HatchStyle hatch = HatchStyle::diagonal;
    long hatch_pitch = 3;
    double solid_fill_fraction = 0.6;        // chance a hatched candidate is solid anyway
    long openings_min = 1, openings_max = 4;
    long clutter_min = 10, clutter_max = 30; // extra non-wall strokes
    double non_manhattan_prob = 0.3;         // angled/curved outer wall

    void validate() const;
};

// One generated plan with exact ground truth: every wall-mask pixel comes
// from wall geometry, clutter never sets mask bits.
struct PlanSample {
    Image image;
    Mask wall;
    Mask doors;
    Mask windows;
    uint64_t seed = 0;
};

PlanSample generate_plan(const PlanSpec& spec, uint64_t seed);

struct SynthDataset {
    std::vector<PlanSample> samples;
    std::vector<std::string> manifest;  // one record per sample: index, seed, spec draw
};

// n samples with per-sample seeds derived from the base seed.
SynthDataset make_dataset(const PlanSpec& spec, long n, uint64_t seed);

// Writes <dir>/plan_XXXX.png, <dir>/plan_XXXX_mask.png (plus door/window
// masks) and <dir>/manifest.txt.
void save_dataset(const SynthDataset& ds, const std::string& dir);

// Reads a directory written by save_dataset back into memory.
SynthDataset load_dataset(const std::string& dir);

}  // namespace mitunet
