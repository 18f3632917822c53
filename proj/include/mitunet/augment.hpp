#pragma once

#include "mitunet/image.hpp"
#include "mitunet/rng.hpp"
#include "mitunet/tensor.hpp"

namespace mitunet {

struct Sample {
    Image image;
    Mask mask;
    bool operator==(const Sample&) const = default;
};

struct AugmentConfig {
    double p_affine = 0.7;
    double scale_min = 0.9, scale_max = 1.1;
    double rotate_min_deg = -15.0, rotate_max_deg = 15.0;
    double translate_frac = 0.1;  // of the image side, each axis

    double p_perspective = 0.3;
    double perspective_jitter = 0.05;  // corner jitter, fraction of side

    double p_elastic = 0.2;
    double elastic_alpha = 8.0, elastic_sigma = 4.0;

    double p_grid = 0.2;
    long grid_cells = 4;
    double grid_magnitude = 0.05;  // node jitter, fraction of cell size

    double p_brightness_contrast = 0.5;
    double brightness_limit = 0.2;  // +-fraction of 255
    double contrast_limit = 0.2;

    double p_clahe = 0.2;
    double clahe_clip = 2.0;
    long clahe_tiles = 8;

    double p_noise = 0.3;
    double noise_sigma_min = 5.0, noise_sigma_max = 20.0;  // 8-bit scale
    double iso_color_shift_min = 0.01, iso_color_shift_max = 0.05;
    double iso_intensity_min = 0.1, iso_intensity_max = 0.5;

    std::array<double, 3> norm_mean = {0.485, 0.456, 0.406};
    std::array<double, 3> norm_std = {0.229, 0.224, 0.225};

    void validate() const;
};

// Geometric transforms: the same map is applied to the image (bilinear) and
// the mask (nearest); out-of-frame regions fill with white paper / background
// label.
Sample affine(const Sample& s, double scale, double angle_deg, double tx, double ty);
Sample perspective(const Sample& s, const std::array<double, 8>& corner_offsets);
Sample elastic(const Sample& s, double alpha, double sigma, uint64_t field_seed);
Sample grid_distort(const Sample& s, long cells, double magnitude, uint64_t node_seed);

// Photometric transforms, image only; output clamped to [0,255].
Image brightness_contrast(const Image& img, double delta_b, double delta_c);
Image clahe(const Image& img, double clip_limit, long tile_grid);
Image gaussian_noise(const Image& img, double sigma, uint64_t seed);
Image iso_noise(const Image& img, double color_shift, double intensity, uint64_t seed);

// Letterbox to square (white image padding, background mask padding), then
// resample to side x side: bilinear for the image, nearest for the mask.
Sample resize_to_training(const Sample& s, long side);

// x/255 -> (x - mean_c) / std_c per RGB channel, as a [3,H,W] tensor.
Tensor<float> normalize(const Image& img, const AugmentConfig& cfg);
Image denormalize(const Tensor<float>& t, const AugmentConfig& cfg);

// Applies each transform group with its configured probability, parameters
// drawn from the config ranges; deterministic given (sample, cfg, seed).
// Geometric -> photometric -> noise; normalization is left to the caller so
// the augmented sample stays viewable.
Sample augment_pipeline(const Sample& s, const AugmentConfig& cfg, uint64_t seed);

}  // namespace mitunet
