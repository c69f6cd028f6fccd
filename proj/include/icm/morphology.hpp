#pragma once

#include <cstdint>
#include <vector>

#include "icm/core.hpp"

namespace icm {

// Binary morphology with a Euclidean disk structuring element (offsets with
// dy^2 + dx^2 <= r^2). Pixels outside the image are ignored: they neither
// erode the border nor get dilated into.

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `features` is set; INT64_MAX where there is none.
std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& features, int height,
                                                     int width);

ImagePlane erode(const ImagePlane& mask, int radius);
ImagePlane dilate(const ImagePlane& mask, int radius);

struct PseudoTrimap {
    ImagePlane trimap; // 1 foreground, 0.5 unknown, 0 background
    bool collapsed_foreground = false;
};

/// fg = erode(mask, r_erode); unknown = dilate(mask, r_dilate) \ fg; rest bg.
/// If erosion empties a nonempty mask, fg is the single pixel deepest inside it.
/// Throws ValueError for radii < 1 or a non-binary mask.
PseudoTrimap pseudo_trimap(const ImagePlane& mask, int erode_radius, int dilate_radius);

/// 10 px at 768 px, scaled linearly with the longer image side, at least 1.
int default_morphology_radius(int height, int width);

} // namespace icm
