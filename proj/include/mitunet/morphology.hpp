#pragma once

#include "mitunet/image.hpp"

namespace mitunet {

// Square structuring element of side 2*radius+1; the canvas border behaves as
// background padding.
Mask dilate(const Mask& m, int radius_px);
Mask erode(const Mask& m, int radius_px);

// Dilation followed by erosion with the same square element; kernel_side must
// be odd.
Mask closing(const Mask& m, int kernel_side);

Mask mask_union(const Mask& a, const Mask& b);
Mask mask_subtract(const Mask& a, const Mask& b);
Mask mask_invert(const Mask& m);

// Annotation refinement: carve dilated door/window openings out of the wall
// mask, then close small residual gaps.
Mask refine_annotation(const Mask& wall, const Mask& doors, const Mask& windows,
                       int dilate_px = 30, int close_kernel = 5);

}  // namespace mitunet
